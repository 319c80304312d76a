"""Report figures: phase portrait, energy decay, energy rate, metric bars.

All figures are written as SVG with deterministic ids and no embedded
timestamps, so reruns with the same inputs are byte-identical. These are
diagnostic plots, not publication graphics.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "metriflow"

_COLORS = {"truth": "0.45", "mcfm": "tab:blue", "baseline": "tab:orange"}
_LABELS = {"truth": "ground truth", "mcfm": "metriplectic", "baseline": "unconstrained"}
_SAVE_OPTS = {"format": "svg", "metadata": {"Date": None}}


def _style(name):
    return {"color": _COLORS.get(name, "k"), "lw": 1.0}


def save_phase_portrait(path, series, max_traj=8):
    """q-p curves per model; series maps name -> list of (n, 2) state arrays."""
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    for name, trajs in series.items():
        for i, states in enumerate(trajs[:max_traj]):
            ax.plot(states[:, 0], states[:, 1],
                    label=_LABELS.get(name, name) if i == 0 else None,
                    alpha=0.8, **_style(name))
    ax.set_xlabel("q")
    ax.set_ylabel("p")
    ax.set_title("phase portrait")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_energy_ratio(path, series):
    """E(t)/E(0) per trajectory; series maps name -> (times, list of E arrays)."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for name, (times, energies) in series.items():
        for i, e in enumerate(energies):
            if e[0] <= 0:
                continue
            ax.plot(times[: len(e)], e / e[0],
                    label=_LABELS.get(name, name) if i == 0 else None,
                    alpha=0.5, **_style(name))
    ax.axhline(1.0, color="k", lw=0.6, ls="--")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("E(t) / E(0)")
    ax.set_title("energy decay")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_energy_rate(path, series):
    """dE/dt traces with the zero line; series maps name -> (times, list of arrays)."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for name, (times, rates) in series.items():
        for i, r in enumerate(rates):
            ax.plot(times[: len(r)], r,
                    label=_LABELS.get(name, name) if i == 0 else None,
                    alpha=0.5, **_style(name))
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("dE/dt")
    ax.set_title("energy rate (positive values violate dissipativity)")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_metric_bars(path, reports):
    """Grouped bars of the scalar metrics; reports maps name -> metrics dict."""
    keys = ["increase_fraction", "max_energy_ratio", "final_energy_ratio",
            "sign_error_fraction", "sw2"]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    names = list(reports)
    width = 0.8 / max(1, len(names))
    for j, name in enumerate(names):
        vals = [reports[name].get(k, float("nan")) for k in keys]
        xs = [i + j * width for i in range(len(keys))]
        ax.bar(xs, vals, width=width, label=_LABELS.get(name, name),
               color=_COLORS.get(name, None))
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(keys))])
    ax.set_xticklabels(["incr frac", "max E ratio", "final E ratio", "sign err", "SW-2"],
                       fontsize=8)
    ax.set_title("physics metrics (lower is better except the ratios' target of 1)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
