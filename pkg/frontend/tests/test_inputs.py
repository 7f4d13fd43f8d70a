import json

import numpy as np
import pytest

from bbmreport.inputs import (ReportInputError, read_dataset, read_report,
                              read_wave_csv, require)
from conftest import GOLDEN, load_golden


def test_read_report_kind_and_fields():
    rec = read_report(GOLDEN / "fit.json", "fit", fields=("ks", "c_hat", "t"))
    assert rec["kind"] == "fit"
    assert rec["ks"] > 0.0


def test_read_report_wrong_kind():
    with pytest.raises(ReportInputError, match="expected a 'decoration' report"):
        read_report(GOLDEN / "fit.json", "decoration")


def test_read_report_missing_field_names_it():
    with pytest.raises(ReportInputError, match="missing field 'no_such_field'"):
        read_report(GOLDEN / "fit.json", "fit", fields=("no_such_field",))


def test_read_report_dotted_field():
    rec = read_report(GOLDEN / "decoration.json", "decoration")
    assert require(rec, "decoration.json", "histogram.edges")
    with pytest.raises(ReportInputError, match="'histogram.nope'"):
        require(rec, "decoration.json", "histogram.nope")


def test_newer_schema_rejected(tmp_path):
    rec = load_golden("fit.json")
    rec["schema_version"] = 99
    p = tmp_path / "future.json"
    p.write_text(json.dumps(rec))
    with pytest.raises(ReportInputError, match="newer than supported"):
        read_report(p, "fit")


def test_not_json(tmp_path):
    p = tmp_path / "junk.json"
    p.write_text("not json at all {")
    with pytest.raises(ReportInputError, match="not valid JSON"):
        read_report(p, "fit")


def test_missing_file():
    with pytest.raises(ReportInputError, match="cannot read input"):
        read_report(GOLDEN / "never_written.json", "fit")


def test_read_dataset_shape():
    ds = read_dataset(GOLDEN / "barrier.jsonl")
    assert ds.values.shape == (400, 2, len(ds.columns))
    assert ds.checkpoints == (2.0, 4.0)
    col = ds.column(4.0, "max_tilde")
    assert col.shape == (400,)
    # dead replicas carry NaN maxima, the rest are real numbers
    assert np.isfinite(col).sum() > 200


def test_read_dataset_unknown_column():
    ds = read_dataset(GOLDEN / "barrier.jsonl")
    with pytest.raises(ReportInputError, match="no column 'nope'"):
        ds.column(4.0, "nope")
    with pytest.raises(ReportInputError, match="no checkpoint at t=3.0"):
        ds.column(3.0, "max_tilde")


def test_read_dataset_rejects_headerless(tmp_path):
    p = tmp_path / "h.jsonl"
    p.write_text('{"kind":"row","replica":0,"t":1.0,"values":[1]}\n')
    with pytest.raises(ReportInputError, match="not a header record"):
        read_dataset(p)


def test_read_wave_csv():
    wave = read_wave_csv(GOLDEN / "wave_r0.csv")
    assert wave.rho == 0.0
    assert wave.residual < 1e-6
    assert not wave.certain
    assert wave.x[0] == 0.0 and wave.g[0] == pytest.approx(1.0, abs=1e-9)
    # g decreasing, so survival 1 - g increasing
    assert np.all(np.diff(wave.g) <= 1e-12)


def test_read_wave_csv_missing_meta(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("# rho=0\nx,g\n0,1\n")
    with pytest.raises(ReportInputError, match="missing field 'residual'"):
        read_wave_csv(p)
