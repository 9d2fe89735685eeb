"""Learning-curve figures: one SVG per panel, mean line with a one
standard deviation band per variant."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import AggregateCurve

# panel file key, metrics column, axis label
PANELS = (
    ("success_rate", "success_rate", "evaluation success rate"),
    ("bc_loss", "mean_bc_loss", "imitation loss"),
    ("filter_fraction", "mean_filter_fraction", "imitation gate pass fraction"),
)

# stable colors so a variant looks the same across envs and panels
VARIANT_COLORS = {
    "static_qg": "tab:blue",
    "naive": "tab:orange",
    "linear": "tab:green",
    "none": "tab:gray",
    "static_qg_no_bc": "tab:purple",
    "naive_with_init": "tab:red",
}


def emit_plots(curves: dict[str, AggregateCurve], env: str, out_dir) -> list[str]:
    """Write one SVG per panel for one environment.

    ``curves`` maps variant name to its aggregated curve. Returns the
    written paths. An empty mapping is an error rather than an empty
    figure.
    """
    if not curves:
        raise ValueError(f"no curves to plot for {env!r}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for key, column, label in PANELS:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for variant in sorted(curves):
            curve = curves[variant]
            color = VARIANT_COLORS.get(variant)
            x = curve.env_steps
            m = curve.mean[column]
            s = curve.std[column]
            ax.plot(x, m, label=variant, color=color)
            ax.fill_between(x, m - s, m + s, alpha=0.2, color=color, lw=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(label)
        ax.set_title(env)
        ax.legend(fontsize="small")
        ax.grid(True, alpha=0.3)
        path = os.path.join(out_dir, f"{env}__{key}.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written
