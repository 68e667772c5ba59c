"""Future-domain metrics and decision-boundary rasters."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import numpy as np

from .data import DomainDataset
from .netgraph import NetSchema, ParamVector, predict

# Marker colours for class 0 / class 1 points.
CLASS_COLORS = ((30, 90, 220), (220, 40, 40))
LOW_COLOR = np.array([0.0, 0.0, 0.0])
HIGH_COLOR = np.array([255.0, 255.0, 255.0])


def metric(pred: np.ndarray, labels: np.ndarray, task: str) -> float:
    """Misclassification % (``pred >= 0.5`` is class 1) or mean absolute error."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if pred.shape != labels.shape:
        raise ValueError(f"prediction shape {pred.shape} vs label shape {labels.shape}")
    if task == "classification":
        return float(100.0 * np.mean((pred >= 0.5).astype(np.float64) != labels))
    if task == "regression":
        return float(np.mean(np.abs(pred - labels)))
    raise ValueError(f"unknown task {task!r}")


def evaluate(schema: NetSchema, prefix_params: Optional[np.ndarray], omega: Union[ParamVector, np.ndarray],
             dataset: DomainDataset, task: Optional[str] = None) -> float:
    if dataset.dim != schema.input_dim:
        raise ValueError(f"dataset has {dataset.dim} features, schema expects {schema.input_dim}")
    pred = predict(schema, omega, prefix_params, dataset.features)
    return metric(pred, dataset.labels, task or dataset.task)


def probability_grid(schema: NetSchema, prefix_params, omega, dataset: DomainDataset,
                     resolution: int, pad: float = 0.1):
    """Network output over a ``resolution x resolution`` grid covering the
    data bounding box padded by ``pad`` of its extent on each side.

    Row 0 of the returned grid is the top (largest second coordinate).
    """
    x = dataset.features
    lo, hi = x.min(axis=0), x.max(axis=0)
    extent = np.where(hi - lo > 0, hi - lo, 1.0)
    lo, hi = lo - pad * extent, hi + pad * extent
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(hi[1], lo[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    prob = predict(schema, omega, prefix_params, pts).reshape(resolution, resolution)
    return prob, lo, hi


def to_pixel(points: np.ndarray, lo: np.ndarray, hi: np.ndarray, resolution: int) -> np.ndarray:
    """(row, col) indices of points in a grid produced by :func:`probability_grid`."""
    col = np.rint((points[:, 0] - lo[0]) / (hi[0] - lo[0]) * (resolution - 1)).astype(int)
    row = np.rint((hi[1] - points[:, 1]) / (hi[1] - lo[1]) * (resolution - 1)).astype(int)
    return np.column_stack([np.clip(row, 0, resolution - 1), np.clip(col, 0, resolution - 1)])


def render_boundary(schema: NetSchema, prefix_params, omega, dataset: DomainDataset,
                    grid_resolution: int, out_path: Union[str, Path], marker_radius: int = 1,
                    draw_points: bool = True) -> Path:
    """Write a binary PPM (P6): grey level = predicted probability (0.5 is
    mid-grey), data points drawn as small squares coloured by class."""
    if dataset.dim != 2:
        raise ValueError(f"render_boundary needs 2-D features, got {dataset.dim}")
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    prob, lo, hi = probability_grid(schema, prefix_params, omega, dataset, grid_resolution)
    img = np.rint(LOW_COLOR + prob[..., None] * (HIGH_COLOR - LOW_COLOR)).astype(np.uint8)
    points = zip(to_pixel(dataset.features, lo, hi, grid_resolution), dataset.labels) if draw_points else ()
    for (r, c), label in points:
        color = CLASS_COLORS[int(label)]
        img[max(r - marker_radius, 0):r + marker_radius + 1, max(c - marker_radius, 0):c + marker_radius + 1] = color
    out_path = Path(out_path)
    header = f"P6\n{grid_resolution} {grid_resolution}\n255\n".encode("ascii")
    try:
        out_path.write_bytes(header + img.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image to {out_path}: {exc.strerror}") from exc
    return out_path


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    """Parse a binary P6 file written by :func:`render_boundary`."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise ValueError(f"{path}: not a P6 image")
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError(f"{path}: unsupported maxval {parts[2]!r}")
    body = parts[3]
    if len(body) != w * h * 3:
        raise ValueError(f"{path}: pixel data has {len(body)} bytes, expected {w * h * 3}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
