"""Static SVG line plots of moment trajectories."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .basis import moment_labels

__all__ = ["plot_moments"]

_STYLES = {
    "predicted": {"color": "black", "lw": 1.5},
    "sample": {"color": "tab:red", "lw": 1.0},
    "linearized": {"color": "tab:blue", "lw": 1.0, "ls": "--"},
}


def _save(fig, path: Path) -> None:
    # Date metadata suppressed so identical runs produce identical files.
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_moments(out_dir: Path, series: dict, d: int, reference=None) -> None:
    """Write m1.svg and m2.svg comparing the given moment series.

    ``reference`` optionally draws constant target lines (length d + d(d+1)/2).
    """
    out_dir = Path(out_dir)
    labels = moment_labels(d)
    n2 = len(labels) - d

    for fname, count, offset in (("m1.svg", d, 0), ("m2.svg", n2, d)):
        fig, axes = plt.subplots(count, 1, figsize=(6, 2.2 * count), sharex=True, squeeze=False)
        for row in range(count):
            ax = axes[row, 0]
            for name, s in series.items():
                style = _STYLES.get(name, {})
                ax.plot(s.times, s.stacked()[:, offset + row], label=name, **style)
            if reference is not None:
                ax.axhline(float(np.asarray(reference)[offset + row]),
                           color="green", lw=0.8, ls=":", label="reference")
            ax.set_ylabel(labels[offset + row])
            if row == 0:
                ax.legend(loc="best", fontsize=8)
        axes[-1, 0].set_xlabel("t [s]")
        fig.tight_layout()
        _save(fig, out_dir / fname)
