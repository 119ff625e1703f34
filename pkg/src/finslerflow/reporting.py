"""Figure rendering for the CLI report path.

Every figure lands next to the delimited/JSON output of the command that
produced it.  Plots are deliberately simple: latitude/longitude traces of
orbits, detected length spectra, transverse Jacobi profiles, and the
counterexample's disjoint pair.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _orbit_trace(ax, theta, phi, **kw):
    """Plot a (phi, theta) trace split at the 2*pi seam."""
    phi = np.asarray(phi)
    theta = np.asarray(theta)
    jumps = np.nonzero(np.abs(np.diff(phi)) > np.pi)[0]
    start = 0
    label = kw.pop("label", None)
    for j in list(jumps) + [len(phi) - 1]:
        ax.plot(phi[start : j + 1], theta[start : j + 1], label=label, **kw)
        label = None
        start = j + 1


def save_trajectory_figure(traj, path):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6))
    xyz = traj.base_xyz()
    theta = np.arcsin(np.clip(xyz[:, 2], -1, 1))
    phi = np.mod(np.arctan2(xyz[:, 1], xyz[:, 0]), 2 * np.pi)
    _orbit_trace(ax1, theta, phi, lw=0.8, color="tab:blue")
    ax1.set_xlabel(r"$\phi$")
    ax1.set_ylabel(r"$\theta$")
    ax1.set_xlim(0, 2 * np.pi)
    ax1.set_ylim(-np.pi / 2, np.pi / 2)
    ax1.set_title("base curve")
    ax2.plot(traj.t, theta, lw=0.8)
    ax2.set_xlabel("arc length t")
    ax2.set_ylabel(r"$\theta(t)$")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_spectrum_figure(analytic, measured, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    names = ["L_short", "L_long"]
    ana = [analytic["L_short"], analytic["L_long"]]
    mea = [measured.get("L_short"), measured.get("L_long")]
    x = np.arange(2)
    ax.bar(x - 0.17, ana, width=0.34, label="analytic")
    if all(v is not None for v in mea):
        ax.bar(x + 0.17, mea, width=0.34, label="measured")
    ax.set_xticks(x, names)
    ax.set_ylabel("length")
    ax.axhline(2 * np.pi, color="gray", lw=0.6, ls="--")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_closed_geodesics_figure(records, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    cmap = plt.get_cmap("viridis")
    lengths = [r.length for r in records] or [1.0]
    lmin, lmax = min(lengths), max(lengths)
    for r in records:
        c = cmap(0.1 + 0.8 * (r.length - lmin) / max(lmax - lmin, 1e-9))
        _orbit_trace(ax, r.samples[:, 0], r.samples[:, 1], lw=0.9, color=c,
                     label=f"L={r.length:.4f}" if r.exceptional or r.on_equator else None)
    ax.set_xlabel(r"$\phi$")
    ax.set_ylabel(r"$\theta$")
    ax.set_xlim(0, 2 * np.pi)
    ax.set_ylim(-np.pi / 2, np.pi / 2)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7, loc="upper right")
    ax.set_title(f"{len(records)} closed geodesics")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_jacobi_figure(jrecords, path):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6))
    for jr in jrecords:
        ax1.plot(jr.times, jr.y, lw=0.7)
        if len(jr.K):
            ax2.plot(jr.K_times, jr.K, lw=0.7)
    ax1.axhline(0.0, color="gray", lw=0.6)
    ax1.axvline(np.pi, color="tab:red", lw=0.8, ls="--", label=r"$t=\pi$")
    ax1.set_ylabel("transverse displacement y(t)")
    ax1.legend()
    ax2.set_xlabel("arc length t")
    ax2.set_ylabel("flag-curvature profile K(t)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_rotation_figure(osc_data, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    rots = [d.rotation for d in osc_data]
    ax.plot(rots, "o")
    ax.set_xlabel("orbit index")
    ax.set_ylabel("rotation number")
    ax.set_title(f"mean {np.mean(rots):.8f}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_counterexample_figure(report, path):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    recs = [r for r in (report.closed_records or []) if r is not None]
    colors = ["tab:blue", "tab:red"]
    for rec, c in zip(recs, colors):
        _orbit_trace(ax, rec.samples[:, 0], rec.samples[:, 1], lw=1.4, color=c,
                     label=f"L={rec.length:.5f}")
    t0 = report.params.t0
    for sgn in (1, -1):
        ax.axhline(sgn * t0, color="gray", lw=0.5, ls=":")
    ax.set_xlim(0, 2 * np.pi)
    ax.set_ylim(-6 * t0, 6 * t0)
    ax.set_xlabel(r"$\phi$")
    ax.set_ylabel(r"$\theta$")
    ax.set_title("the two disjoint closed geodesics")
    if recs:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_conjugacy_figure(entries, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(entries))
    shorts = [e["measured_shortest"] for e in entries]
    seconds = [e["measured_second"] for e in entries]
    inv1 = [e["invariants"][0] for e in entries]
    inv2 = [e["invariants"][1] for e in entries]
    ax.plot(x, shorts, "o", label="measured shortest")
    ax.plot(x, inv1, "_", ms=18, label="invariant P1")
    ax.plot(x, seconds, "s", label="measured second")
    ax.plot(x, inv2, "_", ms=18, label="invariant P2")
    ax.set_xticks(x, [e["metric"] for e in entries], fontsize=7)
    ax.set_ylabel("length")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
