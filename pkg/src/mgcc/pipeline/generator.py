"""Generator backends. The mock one makes layout and conditioning visible in pixels."""
from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np
import torch
from scipy import ndimage

from mgcc.grounding.layout import DEFAULT_CANVAS, BoundingBox, Layout


def label_color(label: str) -> tuple[int, int, int]:
    """Fixed color per label; every channel is >= 128."""
    d = hashlib.sha256(label.encode("utf-8")).digest()
    return (d[0] | 0x80, d[1] | 0x80, d[2] | 0x80)


def background_color(conditioning: np.ndarray | torch.Tensor, seed: int) -> tuple[int, int, int]:
    """Color derived from the conditioning bytes and seed; every channel is < 64."""
    arr = np.ascontiguousarray(np.asarray(torch.as_tensor(conditioning).detach().cpu(), dtype="<f4"))
    d = hashlib.sha256(arr.tobytes() + int(seed).to_bytes(8, "little", signed=True)).digest()
    return (d[0] >> 2, d[1] >> 2, d[2] >> 2)


def scale_box(box: BoundingBox, canvas, size: int) -> tuple[int, int, int, int]:
    """Canvas box -> (x0, y0, x1, y1) pixel bounds on a size x size render.

    Exact integer division; boxes never vanish (at least one pixel).
    """
    W, H = canvas
    x0, y0 = box.x * size // W, box.y * size // H
    x1 = max((box.x + box.w) * size // W, x0 + 1)
    y1 = max((box.y + box.h) * size // H, y0 + 1)
    return x0, y0, min(x1, size), min(y1, size)


def render_layout(layout: Layout | None, size: int, background=(0, 0, 0)) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = background
    if layout is not None:
        for obj in layout.objects:
            x0, y0, x1, y1 = scale_box(obj.box, layout.canvas, size)
            img[y0:y1, x0:x1] = label_color(obj.label)
    return img


class GeneratorBackend(Protocol):
    def __call__(self, conditioning: torch.Tensor, layout: Layout | None, seed: int) -> np.ndarray: ...


class MockGenerator:
    """Deterministic stand-in for a box-conditioned diffusion model.

    Fills the canvas with a color hashed from (conditioning, seed) and draws
    each layout box as a rectangle in its label's color, in layout order.
    """

    def __init__(self, render_size: int = 64):
        self.render_size = render_size

    def __call__(self, conditioning, layout: Layout | None, seed: int = 0) -> np.ndarray:
        return render_layout(layout, self.render_size, background_color(conditioning, seed))


def decode_rectangles(image: np.ndarray, labels, canvas=DEFAULT_CANVAS) -> list[tuple[str, list[int]]]:
    """Recover (label, canvas box) pairs from a mock render.

    Each 4-connected region of a label's color is one box. Only exact when
    boxes do not touch and their coordinates are multiples of canvas/size.
    """
    size = image.shape[0]
    W, H = canvas
    found = []
    for label in sorted(set(labels)):
        hit = np.all(image == np.array(label_color(label), dtype=np.uint8), axis=-1)
        regions, count = ndimage.label(hit)
        for sl in ndimage.find_objects(regions):
            ys, xs = sl
            box = [xs.start * W // size, ys.start * H // size, (xs.stop - xs.start) * W // size, (ys.stop - ys.start) * H // size]
            found.append((label, box))
    return sorted(found)
