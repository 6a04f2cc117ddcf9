"""Gaze heatmaps: 2D histogram over the unit square, Gaussian smoothing,
and highest-density-region (HDR) contour thresholds.

Grid cells are indexed [row, col] with row = y bin and col = x bin; the
CSV and image outputs use the same orientation.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from ._io import atomic_write_bytes, atomic_write_text, fmt_g9
from .errors import NoValidGazeError
from .telemetry import SessionTimeline

DEFAULT_BINS = 64
DEFAULT_BANDWIDTH_CELLS = 2.0
DEFAULT_LEVELS = (0.25, 0.5, 0.75, 0.9)
TRUNCATE_BANDWIDTHS = 4.0


@dataclass(frozen=True)
class DensityGrid:
    cells: np.ndarray
    normalized: bool

    @property
    def bins_x(self) -> int:
        return self.cells.shape[1]

    @property
    def bins_y(self) -> int:
        return self.cells.shape[0]


def valid_gaze_points(timeline: SessionTimeline) -> tuple[np.ndarray, np.ndarray]:
    """Gaze coordinates of the gaze-valid ticks only."""
    mask = timeline.gaze_valid
    return timeline.gaze_x[mask], timeline.gaze_y[mask]


def histogram2d(x, y, bins_x: int = DEFAULT_BINS,
                bins_y: int = DEFAULT_BINS) -> DensityGrid:
    """Normalized 2D histogram; x=1 / y=1 fall into the last cell."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise ValueError("x and y must have equal length")
    if x.size == 0:
        raise NoValidGazeError("no gaze points to histogram")
    if bins_x < 1 or bins_y < 1:
        raise ValueError("bin counts must be positive")
    if (x.min() < 0.0 or x.max() > 1.0 or y.min() < 0.0 or y.max() > 1.0):
        raise ValueError("gaze coordinates must lie in the unit square")
    counts, _, _ = np.histogram2d(x, y, bins=[bins_x, bins_y],
                                  range=[[0.0, 1.0], [0.0, 1.0]])
    return DensityGrid(counts.T / x.size, normalized=True)


def gaussian_smooth(grid: DensityGrid,
                    bandwidth_cells: float = DEFAULT_BANDWIDTH_CELLS) -> DensityGrid:
    """Separable Gaussian blur, kernel truncated at 4 bandwidths, borders
    reflected, result renormalized to unit mass."""
    if not grid.normalized:
        raise ValueError("smooth a normalized grid")
    if bandwidth_cells <= 0:
        raise ValueError("bandwidth must be positive")
    smoothed = gaussian_filter(grid.cells, sigma=bandwidth_cells,
                               mode="reflect", truncate=TRUNCATE_BANDWIDTHS)
    total = smoothed.sum()
    return DensityGrid(smoothed / total, normalized=True)


def hdr_thresholds(grid: DensityGrid, probabilities) -> list[float]:
    """For each probability p, the largest density threshold t whose region
    {cells >= t} holds mass >= p."""
    if not grid.normalized:
        raise ValueError("HDR thresholds need a normalized grid")
    probs = list(probabilities)
    for p in probs:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"probability {p} outside (0, 1]")
    values = grid.cells.ravel()
    uniq, counts = np.unique(values[values > 0.0], return_counts=True)
    uniq = uniq[::-1]
    group_mass = uniq * counts[::-1]
    cum_mass = np.cumsum(group_mass)
    out = []
    for p in probs:
        k = int(np.searchsorted(cum_mass, p - 1e-9, side="left"))
        k = min(k, uniq.size - 1)
        out.append(float(uniq[k]))
    return out


def region_cell_count(grid: DensityGrid, threshold: float) -> int:
    return int(np.count_nonzero(grid.cells >= threshold))


def render(grid: DensityGrid, thresholds) -> tuple[bytes, str]:
    """Contour-band image (binary PGM, one pixel per cell) plus a raw
    density CSV. Band index = number of thresholds a cell's density meets,
    mapped monotonically onto gray levels."""
    if not grid.normalized:
        raise ValueError("render a normalized grid")
    thr = sorted(float(t) for t in thresholds)
    bands = np.zeros(grid.cells.shape, dtype=np.int64)
    for t in thr:
        bands += grid.cells >= t
    if thr:
        pixels = np.round(bands * (255.0 / len(thr))).astype(np.uint8)
    else:
        pixels = np.zeros(grid.cells.shape, dtype=np.uint8)
    header = f"P5\n{grid.bins_x} {grid.bins_y}\n255\n".encode("ascii")
    image = header + pixels.tobytes()

    lines = ["row,col,density"]
    for r in range(grid.bins_y):
        for c in range(grid.bins_x):
            lines.append(f"{r},{c},{fmt_g9(grid.cells[r, c])}")
    return image, "\n".join(lines) + "\n"


def write_heatmap(grid: DensityGrid, thresholds, image_path: str | Path,
                  csv_path: str | Path) -> None:
    image, csv_text = render(grid, thresholds)
    atomic_write_bytes(image_path, image)
    atomic_write_text(csv_path, csv_text)
