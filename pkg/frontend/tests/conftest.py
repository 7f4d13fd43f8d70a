import json
from pathlib import Path

import pytest

GOLDEN = Path(__file__).parent / "golden"


def golden_spec(out_dir, **overrides) -> dict:
    """The full five-plot spec over the shipped golden files."""
    spec = {
        "output_dir": str(out_dir),
        "title": "Golden diagnostics",
        "timestamp": False,
        "cdf_fit": {
            "fit_report": str(GOLDEN / "fit.json"),
            "dataset": str(GOLDEN / "barrier.jsonl"),
        },
        "martingales": {
            "report": str(GOLDEN / "analysis_nobar.json"),
            "columns": ["W_all", "Z_all", "V_all"],
        },
        "survival_wave": {
            "points": [
                {"rho": 0.0, "x": 1.0,
                 "report": str(GOLDEN / "analysis_surv_r0_x1.json")},
                {"rho": 0.0, "x": 2.0,
                 "report": str(GOLDEN / "analysis_surv_r0_x2.json")},
                {"rho": 0.7, "x": 1.0,
                 "report": str(GOLDEN / "analysis_surv_r07_x1.json")},
            ],
            "waves": [
                {"csv": str(GOLDEN / "wave_r0.csv")},
                {"csv": str(GOLDEN / "wave_r07.csv")},
            ],
        },
        "laplace": {"report": str(GOLDEN / "analysis_barrier.json")},
        "decoration": {"report": str(GOLDEN / "decoration.json")},
    }
    spec.update(overrides)
    return spec


def load_golden(name: str) -> dict:
    return json.loads((GOLDEN / name).read_text())


@pytest.fixture()
def full_spec(tmp_path):
    return golden_spec(tmp_path / "report")
