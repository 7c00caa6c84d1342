"""Timeline export: one row of coloured bars per track (codes, predictions, ground truth)."""
import logging
from typing import Dict, Optional

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from bidnet.segments import runs  # noqa: E402

logger = logging.getLogger(__name__)

PALETTE = plt.get_cmap("tab20")
BACKGROUND_COLOUR = (0.85, 0.85, 0.85, 1.0)


def colour_for(value: int, background_id: Optional[int] = None):
    """Fixed colour per id: tab20 cycled by id, light grey for background."""
    if background_id is not None and value == background_id:
        return BACKGROUND_COLOUR
    return PALETTE(int(value) % PALETTE.N)


def plot_timeline(path: str, tracks: Dict[str, np.ndarray], background_ids: Dict[str, int] = None,
                  title: Optional[str] = None):
    """Writes the tracks as horizontal bar rows to `path`; the format follows its extension (svg by default)."""
    background_ids = background_ids or {}
    names = list(tracks)
    steps = max(len(v) for v in tracks.values())
    fig, ax = plt.subplots(figsize=(max(6.0, steps / 20.0), 0.6 * len(names) + 1.0))
    try:
        for row, name in enumerate(names):
            values = np.asarray(tracks[name])
            bars = [(start, stop - start) for start, stop in runs(values)]
            colours = [colour_for(values[start], background_ids.get(name)) for start, _ in bars]
            ax.broken_barh(bars, (row - 0.4, 0.8), facecolors=colours)
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names)
        ax.set_ylim(len(names) - 0.5, -0.5)
        ax.set_xlim(0, steps)
        ax.set_xlabel("frame")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
    finally:
        plt.close(fig)
    logger.info(f"Saved timeline plot to {path}")
