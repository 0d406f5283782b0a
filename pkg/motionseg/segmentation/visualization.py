"""
Images for offline inspection: group overlays and color-wheel flow plots.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence as SequenceType, Tuple

import numpy as np
from PIL import Image, ImageColor

from . import constants
from .cues import FlowField
from .exceptions import IoFailure

logger = logging.getLogger(__name__)

RGB = Tuple[int, int, int]

UNASSIGNED_COLOR: RGB = (0, 0, 0)
BACKGROUND_COLOR: RGB = (48, 48, 48)

# Middlebury wheel: red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red
WHEEL_SEGMENTS = (15, 6, 4, 11, 13, 6)
SATURATED_DIM = 0.75


def group_palette(k: int) -> List[RGB]:
    """k evenly spaced, fully saturated hues."""
    return [ImageColor.getrgb(f"hsv({int(round(360 * i / max(k, 1))) % 360},100%,100%)") for i in range(k)]


def make_color_wheel() -> np.ndarray:
    """(55, 3) table of wheel colors, each segment ramping one channel."""
    ry, yg, gc, cb, bm, mr = WHEEL_SEGMENTS
    wheel = np.zeros((sum(WHEEL_SEGMENTS), 3))

    def ramp(n):
        return np.floor(255 * np.arange(n) / n)

    col = 0
    wheel[col:col + ry, 0] = 255
    wheel[col:col + ry, 1] = ramp(ry)
    col += ry
    wheel[col:col + yg, 0] = 255 - ramp(yg)
    wheel[col:col + yg, 1] = 255
    col += yg
    wheel[col:col + gc, 1] = 255
    wheel[col:col + gc, 2] = ramp(gc)
    col += gc
    wheel[col:col + cb, 1] = 255 - ramp(cb)
    wheel[col:col + cb, 2] = 255
    col += cb
    wheel[col:col + bm, 2] = 255
    wheel[col:col + bm, 0] = ramp(bm)
    col += bm
    wheel[col:col + mr, 2] = 255 - ramp(mr)
    wheel[col:col + mr, 0] = 255
    return wheel


def flow_to_color(flow: FlowField, max_magnitude: Optional[float] = None) -> np.ndarray:
    """Middlebury color coding; returns (H, W, 3) uint8 RGB.

    Direction picks the wheel color and magnitude blends it from white. Flow is
    scaled by ``max_magnitude`` (default: the largest vector), and vectors
    beyond it are drawn darker.
    """
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    magnitude = np.hypot(u, v)
    scale = max_magnitude if max_magnitude is not None else float(magnitude.max())
    rad = magnitude / scale if scale > 0 else np.zeros_like(magnitude)

    wheel = make_color_wheel()
    ncols = wheel.shape[0]
    angle = np.arctan2(-v, -u) / np.pi
    fk = np.mod(angle + 1.0, 2.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = fk - k0

    image = np.zeros(u.shape + (3,), dtype=np.uint8)
    inside = rad <= 1
    for channel in range(3):
        col = (1 - f) * wheel[k0, channel] / 255.0 + f * wheel[k1, channel] / 255.0
        col = np.where(inside, 1 - rad * (1 - col), col * SATURATED_DIM)
        image[..., channel] = np.floor(255 * col).astype(np.uint8)
    return image


def render_overlay(labels: np.ndarray, palette: SequenceType[RGB],
                   background_label: Optional[int] = None) -> np.ndarray:
    """Color label L with palette[L - 1]; background dim, unassigned black."""
    labels = np.asarray(labels)
    image = np.zeros(labels.shape + (3,), dtype=np.uint8)
    image[:] = UNASSIGNED_COLOR
    for label in np.unique(labels):
        if label == constants.UNASSIGNED_LABEL:
            continue
        if background_label is not None and label == background_label:
            color = BACKGROUND_COLOR
        else:
            color = palette[(int(label) - 1) % len(palette)]
        image[labels == label] = color
    return image


def save_rgb(path, image: np.ndarray) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format='PNG')
    except OSError as e:
        raise IoFailure(f"{path}: {e}")
    return path


def write_overlays(frames: SequenceType[np.ndarray], out_dir, num_groups: int,
                   background_label: Optional[int] = None) -> List[Path]:
    palette = group_palette(max(num_groups, 1))
    out_dir = Path(out_dir)
    paths = [
        save_rgb(out_dir / f"overlay_{index:04d}.png", render_overlay(labels, palette, background_label))
        for index, labels in enumerate(frames)
    ]
    logger.info(f"Wrote {len(paths)} overlays to {out_dir}")
    return paths


def write_flow_images(flows: SequenceType[FlowField], out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    # one shared scale so colors compare across frames
    largest = max((float(np.hypot(f.u, f.v).max()) for f in flows), default=0.0)
    return [
        save_rgb(out_dir / f"flow_{index:04d}.png", flow_to_color(flow, largest))
        for index, flow in enumerate(flows)
    ]
