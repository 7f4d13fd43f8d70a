"""Report assembly: validate, build figures in memory, then write.

Rendering is two-phase on purpose. Phase one only reads input files and
builds figures plus the HTML text, so any spec or input problem aborts
before a single byte lands on disk and a broken run cannot leave a
partial report behind. Phase two writes bytes it already holds.
"""
from __future__ import annotations

import datetime as _dt
import io as _io
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np

from . import plots
from .inputs import (ReportInputError, ReportSpecError, read_dataset,
                     read_report, read_wave_csv, require, estimate_rows,
                     table_rows)
from .plots import fmt, fmt_se

# canonical render order; also the complete set of known diagnostics
PLOT_NAMES = ("cdf_fit", "martingales", "survival_wave", "laplace", "decoration")

_TITLES = {
    "cdf_fit": "Centered maximum vs fitted mixture",
    "martingales": "Martingale means",
    "survival_wave": "Survival vs travelling wave",
    "laplace": "Laplace functional stability",
    "decoration": "Decoration atoms",
}

# fixed so identical inputs serialize to identical SVG bytes
_RC = {"svg.hashsalt": "bbmreport", "svg.fonttype": "none"}


@dataclass(frozen=True)
class ReportSpec:
    """What to render, from which files, into which directory.

    Each selected plot needs its matching config mapping; everything else
    may stay None. Inputs are only ever read.
    """

    output_dir: str
    plots: tuple = PLOT_NAMES
    cdf_fit: dict | None = None
    martingales: dict | None = None
    survival_wave: dict | None = None
    laplace: dict | None = None
    decoration: dict | None = None
    title: str = "Simulation diagnostics"
    timestamp: bool = True

    def __post_init__(self):
        object.__setattr__(self, "plots", tuple(self.plots))
        for name in self.plots:
            if name not in PLOT_NAMES:
                raise ReportSpecError(
                    f"unknown plot {name!r}; known plots: "
                    + ", ".join(PLOT_NAMES))
        if len(set(self.plots)) != len(self.plots):
            raise ReportSpecError("plot selection lists a plot twice")
        for name in self.plots:
            if getattr(self, name) is None:
                raise ReportSpecError(
                    f"plot {name!r} selected but spec field {name!r} is missing")

    @staticmethod
    def from_mapping(rec: dict, base_dir=".") -> "ReportSpec":
        """Build a spec from a parsed JSON document.

        Relative input paths resolve against base_dir, normally the spec
        file's own directory.
        """
        if not isinstance(rec, dict):
            raise ReportSpecError("report spec must be a JSON object")
        known = {"output_dir", "plots", "title", "timestamp", *PLOT_NAMES}
        for key in rec:
            if key not in known:
                raise ReportSpecError(
                    f"unknown spec field {key!r}; known fields: "
                    + ", ".join(sorted(known)))
        if "output_dir" not in rec:
            raise ReportSpecError("report spec is missing field 'output_dir'")
        base = Path(base_dir)

        def _resolve(node):
            if isinstance(node, str):
                return str(base / node) if not Path(node).is_absolute() else node
            if isinstance(node, dict):
                return {k: (_resolve(v) if k.endswith(("report", "dataset", "csv"))
                            or k in ("summary",) else v)
                        for k, v in node.items()}
            if isinstance(node, list):
                return [_resolve(v) for v in node]
            return node

        kwargs = {"output_dir": str(base / rec["output_dir"])
                  if not Path(rec["output_dir"]).is_absolute() else rec["output_dir"]}
        if "plots" in rec:
            kwargs["plots"] = tuple(rec["plots"])
        for key in ("title", "timestamp"):
            if key in rec:
                kwargs[key] = rec[key]
        for name in PLOT_NAMES:
            if name in rec:
                node = rec[name]
                if not isinstance(node, dict):
                    raise ReportSpecError(f"spec field {name!r} must be an object")
                kwargs[name] = _resolve(node)
        return ReportSpec(**kwargs)

    @staticmethod
    def from_file(path) -> "ReportSpec":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ReportSpecError(f"{path}: cannot read spec ({exc})") from exc
        try:
            rec = json.loads(text)
        except ValueError as exc:
            raise ReportSpecError(f"{path}: spec is not valid JSON ({exc})") from exc
        return ReportSpec.from_mapping(rec, base_dir=Path(path).parent)


def _need(cfg: dict, plot: str, key: str):
    if key not in cfg:
        raise ReportSpecError(f"plot {plot!r} config is missing field {key!r}")
    return cfg[key]


@dataclass
class _Section:
    name: str
    caption: str
    stats: list = field(default_factory=list)
    svg: bytes = b""


def _svg_bytes(fig) -> bytes:
    from matplotlib import pyplot as plt

    buf = _io.BytesIO()
    with matplotlib.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def _build_cdf_fit(cfg: dict) -> _Section:
    path = _need(cfg, "cdf_fit", "fit_report")
    fit = read_report(path, "fit",
                      fields=("t", "c_hat", "ks", "n", "centering",
                              "fitted", "empirical"))
    empirical = None
    if cfg.get("dataset"):
        ds = read_dataset(cfg["dataset"])
        col = ds.column(float(require(fit, path, "t")), "max_tilde")
        centered = col[np.isfinite(col)] - float(require(fit, path, "centering"))
        centered.sort()
        empirical = (centered, (1.0 + np.arange(centered.size)) / centered.size)
    fig = plots.cdf_fit_figure(fit, path, empirical=empirical)
    sec = _Section("cdf_fit", _TITLES["cdf_fit"])
    sec.stats = [("t", f"{float(fit['t']):g}"),
                 ("KS", fmt(fit["ks"])),
                 ("c_hat", fmt(fit["c_hat"])),
                 ("n", str(int(fit["n"])))]
    if "synthetic_check" in fit:
        sec.stats.append(("synthetic c recovered",
                          fmt(require(fit, path, "synthetic_check.c_recovered"))))
    sec.svg = _svg_bytes(fig)
    return sec


def _build_martingales(cfg: dict) -> _Section:
    path = _need(cfg, "martingales", "report")
    columns = tuple(cfg.get("columns", ("W_all",)))
    if not columns:
        raise ReportSpecError("plot 'martingales' config lists no columns")
    report = read_report(path, "analysis", fields=("means",))
    fig = plots.martingale_figure(report, path, columns)
    sec = _Section("martingales", _TITLES["martingales"])
    for name in columns:
        t, v, se = table_rows(report, path, "means", name)[-1]
        sec.stats.append((f"{name} at t={t:g}", f"{fmt(v)} +- {fmt_se(se)}"))
    sec.svg = _svg_bytes(fig)
    return sec


def _build_survival_wave(cfg: dict) -> _Section:
    entries = _need(cfg, "survival_wave", "points")
    wave_specs = _need(cfg, "survival_wave", "waves")
    if not entries or not wave_specs:
        raise ReportSpecError(
            "plot 'survival_wave' needs at least one entry in both "
            "'points' and 'waves'")
    waves = []
    for node in wave_specs:
        waves.append(read_wave_csv(_need(node, "survival_wave", "csv")))
    points = []
    sec = _Section("survival_wave", _TITLES["survival_wave"])
    for node in entries:
        path = _need(node, "survival_wave", "report")
        rho = float(_need(node, "survival_wave", "rho"))
        x = float(_need(node, "survival_wave", "x"))
        report = read_report(path, "analysis", fields=("survival",))
        rows = estimate_rows(require(report, path, "survival"), path, "survival")
        if "t" in node:
            want = float(node["t"])
            match = [r for r in rows if abs(r[0] - want) <= 1e-9]
            if not match:
                raise ReportInputError(
                    f"{path}: no survival record at t={want!r}")
            t, v, se = match[0]
        else:
            t, v, se = rows[-1]
        points.append((rho, x, t, v, se))
        sec.stats.append((f"rho={rho:g} x={x:g} t={t:g}",
                          f"{fmt(v)} +- {fmt_se(se)}"))
    fig = plots.survival_wave_figure(points, waves)
    for wave in waves:
        sec.stats.append((f"wave rho={wave.rho:g} residual",
                          fmt(wave.residual)))
    sec.svg = _svg_bytes(fig)
    return sec


def _build_laplace(cfg: dict) -> _Section:
    path = _need(cfg, "laplace", "report")
    report = read_report(path, "analysis", fields=("laplace",))
    table = require(report, path, "laplace")
    names = tuple(cfg.get("phis") or sorted(table))
    fig = plots.laplace_figure(report, path, names)
    sec = _Section("laplace", _TITLES["laplace"])
    for name in names:
        t, v, se = table_rows(report, path, "laplace", name)[-1]
        sec.stats.append((f"{name} at t={t:g}", f"{fmt(v)} +- {fmt_se(se)}"))
    sec.svg = _svg_bytes(fig)
    return sec


def _build_decoration(cfg: dict) -> _Section:
    path = _need(cfg, "decoration", "report")
    report = read_report(path, "decoration",
                         fields=("t", "n", "acceptance", "histogram.edges",
                                 "histogram.counts"))
    fig = plots.decoration_figure(report, path)
    sec = _Section("decoration", _TITLES["decoration"])
    sec.stats = [("t", f"{float(report['t']):g}"),
                 ("clouds", str(int(report["n"]))),
                 ("acceptance", fmt(report["acceptance"]))]
    sec.svg = _svg_bytes(fig)
    return sec


_BUILDERS = {
    "cdf_fit": _build_cdf_fit,
    "martingales": _build_martingales,
    "survival_wave": _build_survival_wave,
    "laplace": _build_laplace,
    "decoration": _build_decoration,
}


def _index_html(spec: ReportSpec, sections) -> str:
    parts = [
        "<!doctype html>",
        '<html lang="en">',
        '<head><meta charset="utf-8">',
        f"<title>{spec.title}</title>",
        "<style>",
        "body { font-family: sans-serif; margin: 2em auto; max-width: 60em; }",
        "section { margin-bottom: 2.5em; }",
        "img { max-width: 100%; border: 1px solid #ddd; }",
        "dl { display: grid; grid-template-columns: max-content auto; gap: 0.2em 1em; }",
        "dt { color: #555; }",
        ".stamp { color: #888; font-size: 0.85em; }",
        "</style></head>",
        "<body>",
        f"<h1>{spec.title}</h1>",
    ]
    if spec.timestamp:
        stamp = _dt.datetime.now().isoformat(timespec="seconds")
        parts.append(f'<p class="stamp">generated {stamp}</p>')
    if not sections:
        parts.append("<p>No plots selected.</p>")
    for sec in sections:
        parts.append(f'<section id="{sec.name}">')
        parts.append(f"<h2>{sec.caption}</h2>")
        parts.append(f'<img src="{sec.name}.svg" alt="{sec.caption}">')
        if sec.stats:
            parts.append("<dl>")
            for key, value in sec.stats:
                parts.append(f"<dt>{key}</dt><dd>{value}</dd>")
            parts.append("</dl>")
        parts.append("</section>")
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"


def render_report(spec: ReportSpec) -> Path:
    """Render every selected diagnostic plus the index page.

    Returns the output directory. Safe to re-run: same inputs produce the
    same bytes, apart from the index timestamp when enabled.
    """
    sections = []
    for name in PLOT_NAMES:
        if name in spec.plots:
            sections.append(_BUILDERS[name](getattr(spec, name)))
    html = _index_html(spec, sections)

    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sec in sections:
        (out / f"{sec.name}.svg").write_bytes(sec.svg)
    (out / "index.html").write_text(html, encoding="utf-8")
    return out
