"""Figure builders, one per diagnostic: validated data in, Figure out.

Every statistic shown here arrives pre-computed from a harness file.
Annotations go through fmt()/fmt_se() so the HTML side and the tests can
reproduce the displayed digits exactly.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import pyplot as plt

from .inputs import ReportInputError, curve_points, require, table_rows

_GRID = dict(alpha=0.3, linewidth=0.6)


def fmt(x) -> str:
    """Display format for values; keep in sync with the harness reports."""
    return f"{float(x):.6g}"


def fmt_se(x) -> str:
    return f"{float(x):.2g}"


def _new_axes(figsize=(6.4, 4.2)):
    fig, ax = plt.subplots(figsize=figsize, constrained_layout=True)
    ax.grid(**_GRID)
    return fig, ax


def cdf_fit_figure(fit: dict, path, empirical=None):
    """Empirical CDF of the centered maximum against the fitted mixture.

    empirical: optional (z, p) arrays recomputed from nothing, just read
    off a dataset stream; falls back to the curve embedded in the report.
    """
    fz, fp = curve_points(fit, path, "fitted")
    if empirical is None:
        ez, ep = curve_points(fit, path, "empirical")
    else:
        ez, ep = empirical
    fig, ax = _new_axes()
    ax.step(ez, ep, where="post", color="#1f77b4", linewidth=1.2,
            label=f"empirical (n = {int(require(fit, path, 'n'))})")
    ax.plot(fz, fp, color="#d62728", linewidth=1.4, label="Gumbel mixture")
    ax.set_xlabel("centered maximum")
    ax.set_ylabel("CDF")
    ax.set_title(f"Centered maximum at t = {require(fit, path, 't'):g} "
                 "vs fitted mixture")
    ax.legend(loc="lower right")
    lines = [f"KS = {fmt(require(fit, path, 'ks'))}",
             f"c_hat = {fmt(require(fit, path, 'c_hat'))}"]
    ax.text(0.03, 0.96, "\n".join(lines), transform=ax.transAxes,
            va="top", ha="left", fontsize=9,
            bbox=dict(boxstyle="round", facecolor="white", alpha=0.8))
    return fig


def martingale_figure(report: dict, path, columns):
    """Per-checkpoint means with 2 SE bands, one panel per column.

    The dashed reference is the first checkpoint's mean: for a
    barrier-free run the later means should stay inside their own bands
    around it.
    """
    means = require(report, path, "means")
    fig, axes = plt.subplots(len(columns), 1, sharex=True,
                             figsize=(6.4, 2.1 * len(columns) + 0.8),
                             constrained_layout=True)
    if len(columns) == 1:
        axes = [axes]
    for ax, name in zip(axes, columns):
        rows = table_rows(report, path, "means", name)
        ts = np.array([r[0] for r in rows])
        vs = np.array([r[1] for r in rows])
        ses = np.array([r[2] for r in rows])
        band = np.where(np.isfinite(ses), 2.0 * ses, 0.0)
        ax.fill_between(ts, vs - band, vs + band, color="#1f77b4", alpha=0.2,
                        label="mean +- 2 SE")
        ax.plot(ts, vs, marker="o", markersize=3, color="#1f77b4")
        ax.axhline(vs[0], linestyle="--", color="#555555", linewidth=0.9)
        ax.grid(**_GRID)
        ax.set_ylabel(name)
        ax.text(0.99, 0.92, f"last: {fmt(vs[-1])} +- {fmt_se(ses[-1])}",
                transform=ax.transAxes, va="top", ha="right", fontsize=8)
    axes[-1].set_xlabel("t")
    axes[0].set_title("Martingale means across checkpoints")
    axes[0].legend(loc="lower left", fontsize=8)
    return fig


def survival_wave_figure(points, waves):
    """Monte Carlo survival markers on top of 1 - g(x) wave curves.

    points: [(rho, x, t, value, se)]; waves: [WaveCurve]. Colors pair a
    curve with its markers through the shared rho value.
    """
    fig, ax = _new_axes()
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]
    color_of = {}
    for wave in waves:
        color = palette[len(color_of) % len(palette)]
        color_of[wave.rho] = color
        ax.plot(wave.x, 1.0 - wave.g, color=color, linewidth=1.3,
                label=f"wave rho = {wave.rho:g}")
    lines = []
    for rho, x, t, value, se in points:
        color = color_of.get(rho)
        if color is None:
            color = palette[len(color_of) % len(palette)]
            color_of[rho] = color
        ax.errorbar([x], [value], yerr=[2.0 * se], fmt="o", markersize=5,
                    color=color, capsize=3)
        lines.append(f"rho={rho:g} x={x:g} t={t:g}: {fmt(value)} +- {fmt_se(se)}")
    ax.set_xlabel("start height x")
    ax.set_ylabel("survival probability")
    ax.set_title("Survival vs travelling-wave prediction")
    ax.legend(loc="lower right", fontsize=8)
    if lines:
        ax.text(0.03, 0.96, "\n".join(lines), transform=ax.transAxes,
                va="top", ha="left", fontsize=8,
                bbox=dict(boxstyle="round", facecolor="white", alpha=0.8))
    return fig


def laplace_figure(report: dict, path, phi_names):
    """Laplace-functional estimates against t, one line per test function."""
    fig, ax = _new_axes()
    for name in phi_names:
        rows = table_rows(report, path, "laplace", name)
        ts = [r[0] for r in rows]
        vs = [r[1] for r in rows]
        ses = [2.0 * r[2] for r in rows]
        ax.errorbar(ts, vs, yerr=ses, marker="o", markersize=3.5,
                    capsize=3, linewidth=1.1,
                    label=f"{name}: {fmt(vs[-1])} +- {fmt_se(rows[-1][2])}")
    ax.set_xlabel("t")
    ax.set_ylabel("mean exp(-<phi, extremal measure>)")
    ax.set_title("Laplace functional stability")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right", fontsize=8)
    return fig


def decoration_figure(report: dict, path):
    """The harness's pooled atom histogram, drawn as-is."""
    edges = [float(e) for e in require(report, path, "histogram.edges")]
    counts = [int(c) for c in require(report, path, "histogram.counts")]
    if len(edges) != len(counts) + 1:
        raise ReportInputError(f"{path}: histogram edges/counts sizes disagree")
    fig, ax = _new_axes()
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
           color="#1f77b4", edgecolor="white", linewidth=0.4)
    ax.set_xlabel("atom position relative to the cloud maximum")
    ax.set_ylabel("pooled atom count")
    ax.set_title(f"Decoration atoms at t = {require(report, path, 't'):g}")
    lines = [f"clouds = {int(require(report, path, 'n'))}",
             f"acceptance = {fmt(require(report, path, 'acceptance'))}"]
    ax.text(0.03, 0.96, "\n".join(lines), transform=ax.transAxes,
            va="top", ha="left", fontsize=9,
            bbox=dict(boxstyle="round", facecolor="white", alpha=0.8))
    return fig
