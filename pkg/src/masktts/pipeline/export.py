"""CSV tables and 8-bit PGM previews with a min/max sidecar."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def write_csv(path: str | os.PathLike, header: list[str], rows: list[list]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError("row width does not match the header")
            w.writerow([_cell(v) for v in row])


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_pgm(path: str | os.PathLike, grid: np.ndarray) -> tuple[float, float]:
    """Binary P5 image of ``grid`` (rows = mel or symbol index, columns = frames).

    Values are min-max scaled to 0..255; the range goes to ``<path>.range.txt``.
    Row 0 is drawn at the bottom so low mel bins sit low, as in a spectrogram plot.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("expected a non-empty 2-D grid")
    lo, hi = float(grid.min()), float(grid.max())
    scaled = np.zeros_like(grid) if hi == lo else (grid - lo) / (hi - lo)
    pixels = np.round(scaled[::-1] * 255.0).astype(np.uint8)
    rows, cols = pixels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode() + pixels.tobytes())
    Path(f"{path}.range.txt").write_text(f"min {lo:.6f}\nmax {hi:.6f}\n")
    return lo, hi


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Pixel grid in the orientation given to ``write_pgm`` (row 0 = lowest index)."""
    buf = Path(path).read_bytes()
    # header as written by write_pgm: three newline-terminated lines, no comments
    magic, size, maxval, data = buf.split(b"\n", 3)
    if magic != b"P5" or int(maxval) != 255:
        raise ValueError(f"{path}: not an 8-bit P5 image")
    cols, rows = (int(x) for x in size.split())
    pixels = np.frombuffer(data, dtype=np.uint8)
    if pixels.size != rows * cols:
        raise ValueError(f"{path}: pixel data size mismatch")
    return pixels.reshape(rows, cols)[::-1]
