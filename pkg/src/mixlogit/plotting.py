"""CEL-curve figures written next to the CSV reports."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "esbda": dict(color="tab:red", lw=1.4),
    "bda": dict(color="tab:orange", lw=1.0, ls="--"),
    "nonconjugate": dict(color="tab:blue", lw=1.0),
}


def _every(trace, interval):
    """Checkpoint rows whose epoch is a multiple of ``interval``."""
    rows = [r for r in trace.rows() if r["epoch"] % interval == 0]
    return ([r["epoch"] for r in rows], [r["train_cel"] for r in rows],
            [r["validation_cel"] for r in rows])


def plot_cel_traces(traces: dict, path, plot_interval: int = 20, output_epoch=None,
                    title: str = ""):
    """Training (left) and validation (right) CEL against epoch.

    ``traces`` maps a label to a ValidationTrace; ``output_epoch`` draws the
    dashed marker where the early-stopped estimate was taken.
    """
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4), sharex=True)
    for label, trace in traces.items():
        if trace is None or not len(trace):
            continue
        epochs, train, val = _every(trace, plot_interval)
        style = STYLE.get(label, {})
        axes[0].plot(epochs, train, label=label, **style)
        axes[1].plot(epochs, val, label=label, **style)
    for ax, name in zip(axes, ("training", "validation")):
        if output_epoch is not None:
            ax.axvline(output_epoch, color="red", ls=":", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel(f"{name} CEL")
        ax.grid(alpha=0.3)
    axes[1].legend(frameon=False, fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    save_figure(fig, path)
    plt.close(fig)


def save_figure(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix)
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120, metadata={"Software": None})
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
