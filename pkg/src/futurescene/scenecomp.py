"""Static background construction and per-vehicle compositing.

The background is a per-pixel, per-channel median over foreground-masked
frames: robust, purely statistical, no learned inpainting. Composited
frames paste renders far-to-near by mean depth so nearer vehicles
overwrite farther ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError
from .render import Viewport

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class BackgroundModel:
    """Median background plus which pixels had unmasked support."""

    image: np.ndarray          # (h, w, 3) uint8
    valid_mask: np.ndarray     # (h, w) bool
    sample_counts: np.ndarray  # (h, w) int32


@dataclass(eq=False)
class CompositeFrame:
    image: np.ndarray          # (h, w, 3) uint8
    placed: tuple              # ((vehicle_id, Viewport, mean_depth), ...)


def _median_uint8(stack: np.ndarray, axis: int = 0) -> np.ndarray:
    """Median rounded half up to uint8 (even counts average two values)."""
    med = np.median(stack, axis=axis)
    return np.floor(med + 0.5).astype(np.uint8)


def build_background(frames, masks=None) -> BackgroundModel:
    """Per-pixel median over unmasked samples.

    masks are boolean foreground masks aligned with frames (True =
    excluded). Pixels masked in every frame fall back to the
    unconditional median over all frames and are dropped from
    valid_mask.

    Raises:
        EmptyInputError: no frames.
    """
    frames = [np.asarray(f) for f in frames]
    if not frames:
        raise EmptyInputError("no frames to build a background from")
    stack = np.stack(frames)                       # (n, h, w, 3)
    n, h, w, _ = stack.shape
    if masks is None:
        mask_stack = np.zeros((n, h, w), dtype=bool)
    else:
        mask_stack = np.stack([np.asarray(m, dtype=bool) for m in masks])
        if mask_stack.shape != (n, h, w):
            raise ValueError("masks must align with frames")

    counts = (~mask_stack).sum(axis=0).astype(np.int32)
    valid = counts > 0

    masked = np.ma.masked_array(
        stack, mask=np.broadcast_to(mask_stack[..., None], stack.shape)
    )
    med = np.ma.median(masked, axis=0)
    image = np.floor(med.filled(0.0) + 0.5).astype(np.uint8)
    if (~valid).any():
        fallback = _median_uint8(stack)
        image[~valid] = fallback[~valid]
    return BackgroundModel(image=image, valid_mask=valid, sample_counts=counts)


def masks_from_tracks(tracks, frame_indices, height: int, width: int,
                      dilation: float = 0.1) -> list:
    """Foreground masks from track boxes, each side grown by `dilation`
    times the box dimension (tracker boxes underestimate vehicles)."""
    out = []
    for fidx in frame_indices:
        m = np.zeros((height, width), dtype=bool)
        for track in tracks:
            e = track.entry_at(fidx)
            if e is None:
                continue
            x, y, w, h = e.bbox
            dx, dy = dilation * w, dilation * h
            x0 = max(0, int(np.floor(x - dx)))
            y0 = max(0, int(np.floor(y - dy)))
            x1 = min(width, int(np.ceil(x + w + dx)))
            y1 = min(height, int(np.ceil(y + h + dy)))
            if x1 > x0 and y1 > y0:
                m[y0:y1, x0:x1] = True
        out.append(m)
    return out


def composite(bg: BackgroundModel, renders, per_pixel_depth: bool = False,
              ) -> CompositeFrame:
    """Paste renders onto the background, far first.

    Renders are ordered by mean depth descending; equal depths are broken
    by lower vehicle id winning (pasted last). With `per_pixel_depth` a
    cross-vehicle z-buffer replaces the global ordering (for scenes with
    interpenetrating boxes).
    """
    image = bg.image.copy()
    h, w = image.shape[:2]
    placed = []
    drawable = [r for r in renders if (r.alpha > 0).any()]
    ordered = sorted(drawable, key=lambda r: (-r.mean_depth, -r.vehicle_id))
    zbuf = np.full((h, w), np.inf) if per_pixel_depth else None

    for r in ordered:
        vp = r.viewport
        x0, y0 = max(0, vp.x0), max(0, vp.y0)
        x1 = min(w, vp.x0 + vp.width)
        y1 = min(h, vp.y0 + vp.height)
        if x1 <= x0 or y1 <= y0:
            continue
        sx, sy = x0 - vp.x0, y0 - vp.y0
        sub_alpha = r.alpha[sy:sy + (y1 - y0), sx:sx + (x1 - x0)] > 0
        sub_color = r.color[sy:sy + (y1 - y0), sx:sx + (x1 - x0)]
        if per_pixel_depth:
            sub_depth = r.depth[sy:sy + (y1 - y0), sx:sx + (x1 - x0)]
            region = zbuf[y0:y1, x0:x1]
            write = sub_alpha & (sub_depth < region)
            region[write] = sub_depth[write]
        else:
            write = sub_alpha
        image[y0:y1, x0:x1][write] = sub_color[write]
        placed.append((r.vehicle_id, Viewport(x0, y0, x1 - x0, y1 - y0),
                       r.mean_depth))
    return CompositeFrame(image=image, placed=tuple(placed))
