"""
Plot loss traces and sweep CSVs to PNG files.
"""
import logging
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

logger = logging.getLogger(__name__)


def plot_loss_trace(csv_path: Union[str, Path], output_path: Optional[Union[str, Path]] = None,
                    title: str = "Denoising loss") -> Path:
    """Raw loss (faint) and its moving average over steps."""
    csv_path = Path(csv_path)
    df = pd.read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(df["step"], df["raw_loss"], alpha=0.3, linewidth=0.8, label="raw")
    ax.plot(df["step"], df["smoothed_loss"], linewidth=1.8, label="smoothed")
    ax.set_title(title)
    ax.set_xlabel("Step")
    ax.set_ylabel("Loss")
    ax.legend()
    ax.grid(True, linestyle="--", alpha=0.7)

    plt.tight_layout()
    output_path = Path(output_path) if output_path else csv_path.with_suffix(".png")
    plt.savefig(output_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    logger.info("loss plot saved as %s", output_path)
    return output_path


def plot_sweep(csv_path: Union[str, Path], x: str, y: str = "score",
               output_path: Optional[Union[str, Path]] = None, title: Optional[str] = None) -> Path:
    """Score against the swept setting (k or t), one marker per run."""
    csv_path = Path(csv_path)
    df = pd.read_csv(csv_path).dropna(subset=[y]).sort_values(x)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(df[x], df[y], marker="o")
    ax.set_title(title or f"{y} vs {x}")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.grid(True, linestyle="--", alpha=0.7)

    plt.tight_layout()
    output_path = Path(output_path) if output_path else csv_path.with_suffix(".png")
    plt.savefig(output_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    logger.info("sweep plot saved as %s", output_path)
    return output_path
