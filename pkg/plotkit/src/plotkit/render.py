"""Deterministic figure rendering from schema-v1 CSVs.

Fixed DPI, fixed fonts, explicit savefig metadata and no timestamps anywhere,
so identical inputs give identical image bytes.
"""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .spec import SpecError, read_csv, require_columns

DPI = 120
SAVE_META = {"Software": "plotkit"}

plt.rcParams.update({
    "font.family": "DejaVu Sans",
    "figure.figsize": (6.0, 4.2),
    "axes.grid": True,
    "grid.alpha": 0.3,
})


def _positive(t, y):
    sel = (t > 0) & (y > 0)
    return t[sel], y[sel]


def _loglog_slope(t, y):
    if t.size < 2:
        return float("nan"), float("nan")
    A = np.stack([np.ones(t.size), np.log(t)], axis=1)
    sol, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    return float(sol[1]), float(np.exp(sol[0]))


def _axes_scaling(ax, fig_spec):
    if fig_spec.log_x:
        ax.set_xscale("log")
    if fig_spec.log_y:
        ax.set_yscale("log")


def build_decay(fig_spec, cols, path):
    columns = fig_spec.columns or ("sup_E", "sup_rho")
    require_columns(cols, ("t",) + tuple(columns), path)
    fig, ax = plt.subplots()
    t_all = cols["t"]
    anchor = None
    for name in columns:
        t, y = _positive(t_all, cols[name])
        if t.size == 0:
            raise SpecError(f"{path}: column {name!r} has no positive values")
        ax.plot(t, y, marker="o", ms=3, lw=1.2, label=name)
        slope, amp = _loglog_slope(t, y)
        ax.plot(t, amp * t**slope, ls="--", lw=1.0,
                label=f"{name} fit: slope {slope:.2f}")
        if anchor is None:
            anchor = (t, y)
    t0, y0 = anchor
    for g in fig_spec.guides:
        ax.plot(t0, y0[0] * (t0 / t0[0]) ** g, ls=":", lw=1.0, color="0.4",
                label=f"slope {g:g} guide")
    ax.set_xlabel("t")
    ax.set_ylabel("sup norm")
    ax.set_title("decay of field and density sup norms")
    ax.legend(fontsize=8)
    _axes_scaling(ax, fig_spec)
    return fig


def build_profile_overlay(fig_spec, cols, path):
    require_columns(cols, ("t", "xi", "t2E", "Einf"), path)
    fig, ax = plt.subplots()
    times = np.unique(cols["t"])
    if times.size == 0:
        raise SpecError(f"{path}: empty overlay series")
    shown = times[-4:] if times.size > 4 else times
    for t in shown:
        sel = cols["t"] == t
        ax.plot(cols["xi"][sel], cols["t2E"][sel], lw=1.0, label=f"t^2 E at t={t:g}")
    sel = cols["t"] == times[-1]
    ax.plot(cols["xi"][sel], cols["Einf"][sel], "k--", lw=1.8,
            label="limiting field")
    ax.set_xlabel("x / t")
    ax.set_ylabel("field amplitude")
    ax.set_title("self-similar field profile overlay")
    ax.legend(fontsize=8)
    if fig_spec.log_y:
        ax.set_yscale("log")
    return fig


def build_cauchy(fig_spec, cols, path):
    require_columns(cols, ("quantity", "t", "value"), path)
    fig, ax = plt.subplots()
    drew = False
    for q in ("V", "Y", "Z"):
        sel = cols["quantity"] == q
        t, y = _positive(cols["t"][sel].astype(float),
                         cols["value"][sel].astype(float))
        if t.size:
            ax.plot(t, y, marker="o", ms=3, lw=1.2, label=f"d_{q}(t)")
            drew = True
    if not drew:
        raise SpecError(f"{path}: no V/Y/Z series to draw")
    ax.set_xlabel("t")
    ax.set_ylabel("max dyadic increment")
    ax.set_title("Cauchy increments of V, Y, Z over doubling times")
    ax.legend(fontsize=8)
    _axes_scaling(ax, fig_spec)
    return fig


def build_conservation(fig_spec, cols, path):
    require_columns(cols, ("t", "E_kin", "E_pot", "E_vp"), path)
    if cols["t"].size == 0:
        raise SpecError(f"{path}: empty diagnostics series")
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.2))
    t = cols["t"]
    for name in ("E_kin", "E_pot", "E_vp"):
        ax1.plot(t, cols[name], lw=1.2, label=name)
    ax1.set_ylabel("energy")
    ax1.legend(fontsize=8)
    ax1.set_title("conservation audit")
    e0 = cols["E_vp"][0]
    drift = np.abs(cols["E_vp"] - e0) / max(abs(e0), 1e-300)
    ax2.plot(t, np.maximum(drift, 1e-18), lw=1.2, color="C3",
             label="|E_vp(t) - E_vp(t_1)| / |E_vp(t_1)|")
    masses = [c for c in cols if c.startswith("M_")]
    for name in masses:
        m0 = cols[name][0]
        md = np.abs(cols[name] - m0) / max(abs(m0), 1e-300)
        ax2.plot(t, np.maximum(md, 1e-18), lw=1.0, ls="--", label=f"{name} drift")
    ax2.set_yscale("log")
    ax2.set_xlabel("t")
    ax2.set_ylabel("relative drift")
    ax2.legend(fontsize=8)
    if fig_spec.log_x:
        ax1.set_xscale("log")
    return fig


_BUILDERS = {
    "decay": build_decay,
    "profile-overlay": build_profile_overlay,
    "cauchy": build_cauchy,
    "conservation": build_conservation,
}


def render(fig_spec, in_dir, out_dir):
    """Render one figure spec; returns the written image path."""
    fig_spec.validate()
    path = fig_spec.inputs[0]
    full = path if os.path.isabs(path) else os.path.join(in_dir, path)
    cols = read_csv(full)
    fig = _BUILDERS[fig_spec.kind](fig_spec, cols, full)
    out_path = os.path.join(out_dir, fig_spec.output)
    fig.savefig(out_path, dpi=DPI, metadata=SAVE_META)
    plt.close(fig)
    return out_path
