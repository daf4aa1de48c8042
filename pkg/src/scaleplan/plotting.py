"""SVG charts of observations against fitted curves on a log-x axis.

The output is byte-stable: a fixed hash salt for SVG element ids and no
creation date in the metadata.
"""

from __future__ import annotations

import io
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .estimators import EstimatorModel, asymptote, evaluate  # noqa: E402


def fit_chart_svg(
    hours: Sequence[float],
    values: Sequence[float],
    models: Mapping[str, EstimatorModel],
    title: str = "",
    ylabel: str = "metric",
    heldout_from: int | None = None,
    extend: float = 4.0,
) -> str:
    """Observed points (held-out ones hollow) and each model's curve, returned as SVG text."""
    x = np.asarray(hours, dtype=float)
    y = np.asarray(values, dtype=float)
    grid = np.geomspace(x.min(), x.max() * extend, 200)
    with plt.rc_context({"svg.hashsalt": "scaleplan", "svg.fonttype": "path", "font.size": 9}):
        fig, ax = plt.subplots(figsize=(5.5, 3.8))
        split = len(x) if heldout_from is None else heldout_from
        ax.plot(x[:split], y[:split], "o", color="black", label="observed")
        if split < len(x):
            ax.plot(x[split:], y[split:], "o", mfc="none", color="black", label="held out")
        for name, model in models.items():
            line, = ax.plot(grid, evaluate(model, grid), "-", lw=1.4, label=name)
            floor = asymptote(model)
            if floor > 0:
                ax.axhline(floor, ls=":", lw=0.8, color=line.get_color())
        ax.set_xscale("log", base=2)
        ax.set_xlabel("training data (hours)")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.grid(True, which="major", lw=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()
