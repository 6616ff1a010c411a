"""CAD meshes and deterministic software rendering.

Two render paths share one z-buffered rasterizer:
  * a 2.5D normal sketch, flat-shaded from per-face camera-space normals
    encoded as channel = floor((n + 1) / 2 * 255 + 0.5);
  * geometric appearance transfer, where each face's color is baked from
    a source crop under the solved pose and re-rendered under the target
    pose.

Rasterization rule: pixel centers at (x + 0.5, y + 0.5), top-left fill
convention, perspective-correct depth, no anti-aliasing, depth ties going
to the lower face index. Output is bit-identical across runs.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import (
    EmptyMeshError,
    MalformedMeshError,
    MissingKeypointError,
    NoValidFaceError,
)
from .posesolve import KEYPOINT_NAMES

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Viewport:
    """Placement rectangle in frame pixels."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 0 or self.height < 0:
            raise ValueError("viewport size must be non-negative")


@dataclass(frozen=True, eq=False)
class CadModel:
    """Triangle mesh with 12 named 3D keypoints.

    Vehicle frame: origin at the vertex centroid (recentered on
    construction), +x forward, +y left, +z up; units meters.
    """

    id: int
    vertices: np.ndarray
    faces: np.ndarray
    keypoints3d: dict

    def __post_init__(self):
        if not 1 <= self.id <= 10:
            raise ValueError(f"cad id {self.id} outside 1..10")
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if faces.shape[0] == 0:
            raise EmptyMeshError("mesh has no faces")
        if faces.min() < 0 or faces.max() >= verts.shape[0]:
            raise MalformedMeshError("face references vertex out of range")
        centroid = verts.mean(axis=0)
        verts = verts - centroid
        missing = [n for n in KEYPOINT_NAMES if n not in self.keypoints3d]
        if missing:
            raise MissingKeypointError(f"missing 3D keypoint: {missing[0]}")
        unknown = [n for n in self.keypoints3d if n not in KEYPOINT_NAMES]
        if unknown:
            raise MalformedMeshError(f"unknown keypoint name: {unknown[0]}")
        kps = {
            n: np.asarray(p, dtype=np.float64).reshape(3) - centroid
            for n, p in self.keypoints3d.items()
        }
        diag = float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))
        if not 1.0 <= diag <= 8.0:
            raise ValueError(
                f"mesh bounding-box diagonal {diag:.3f} m outside [1, 8]"
            )
        verts.flags.writeable = False
        faces.flags.writeable = False
        for p in kps.values():
            p.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "keypoints3d", kps)

    @property
    def keypoint_array(self) -> np.ndarray:
        """(12, 3) keypoints in the canonical name order."""
        return np.array([self.keypoints3d[n] for n in KEYPOINT_NAMES])


def load_cad(mesh_text: str, keypoint_text: str, cad_id: int = 1) -> CadModel:
    """Parse mesh text (wavefront style v/f records, quads fanned at the
    first vertex) plus `name x y z` keypoint annotations.

    Raises:
        MalformedMeshError, EmptyMeshError, MissingKeypointError
    """
    vertices = []
    faces = []
    for ln, line in enumerate(mesh_text.splitlines(), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise MalformedMeshError(f"line {ln}: vertex needs 3 coords")
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError as exc:
                raise MalformedMeshError(f"line {ln}: {exc}") from exc
        elif tokens[0] == "f":
            try:
                idx = [int(t.split("/")[0]) - 1 for t in tokens[1:]]
            except ValueError as exc:
                raise MalformedMeshError(f"line {ln}: {exc}") from exc
            if len(idx) < 3:
                raise MalformedMeshError(f"line {ln}: face needs >= 3 vertices")
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
        # other records (vn, vt, materials) are irrelevant here
    if not faces:
        raise EmptyMeshError("mesh text contains no faces")

    keypoints = {}
    for ln, line in enumerate(keypoint_text.splitlines(), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) != 4:
            raise MalformedMeshError(
                f"keypoints line {ln}: expected 'name x y z'"
            )
        try:
            keypoints[tokens[0]] = [float(t) for t in tokens[1:4]]
        except ValueError as exc:
            raise MalformedMeshError(f"keypoints line {ln}: {exc}") from exc
    return CadModel(cad_id, np.array(vertices), np.array(faces), keypoints)


def cad_to_obj(cad: CadModel) -> str:
    lines = [f"# futurescene cad {cad.id}"]
    for v in cad.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f in cad.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(lines) + "\n"


def cad_keypoints_text(cad: CadModel) -> str:
    lines = ["# name x y z"]
    for n in KEYPOINT_NAMES:
        p = cad.keypoints3d[n]
        lines.append(f"{n} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    return "\n".join(lines) + "\n"


@dataclass(eq=False)
class NormalSketch:
    """2.5D sketch: encoded camera-space normals, alpha, per-pixel depth.

    alpha > 0 exactly where depth is finite; viewport places the buffers
    in frame coordinates.
    """

    color: np.ndarray                # (h, w, 3) uint8
    alpha: np.ndarray                # (h, w) uint8, 0 or 255
    depth: np.ndarray                # (h, w) float64, +inf where empty
    viewport: Viewport
    warning: str | None = None
    face_index: np.ndarray | None = None  # (h, w) int32, -1 where empty

    @property
    def mean_depth(self) -> float:
        covered = self.alpha > 0
        if not covered.any():
            return float("inf")
        return float(self.depth[covered].mean())


@dataclass(eq=False)
class RenderedCrop(NormalSketch):
    """A normal sketch or re-textured render tagged with its vehicle."""

    vehicle_id: int = -1

    @classmethod
    def from_sketch(cls, sketch: NormalSketch, vehicle_id: int) -> "RenderedCrop":
        return cls(sketch.color, sketch.alpha, sketch.depth, sketch.viewport,
                   sketch.warning, sketch.face_index, vehicle_id)


@dataclass(frozen=True, eq=False)
class BakedAppearance:
    """Per-face colors sampled from a source crop under the source pose."""

    face_colors: np.ndarray          # (n_faces, 3) float64
    face_valid: np.ndarray           # (n_faces,) bool
    source_pose: geom.Pose
    source_crop_ref: str = ""

    def __post_init__(self):
        if not self.face_valid.any():
            raise NoValidFaceError("appearance bake produced no valid face")


def _camera_vertices(cad: CadModel, pose: geom.Pose) -> np.ndarray:
    return pose.apply(cad.vertices)


def face_normals_camera(cad: CadModel, pose: geom.Pose) -> np.ndarray:
    """Unit per-face normals in camera space, flipped toward the camera."""
    q = _camera_vertices(cad, pose)
    a, b, c = (q[cad.faces[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    norms = np.linalg.norm(n, axis=1)
    norms[norms == 0] = 1.0
    n = n / norms[:, None]
    centroid = (a + b + c) / 3.0
    flip = np.einsum("ij,ij->i", n, centroid) > 0
    n[flip] = -n[flip]
    return n


def encode_normal(n: np.ndarray) -> np.ndarray:
    """Unit normal -> uint8 color, round half up."""
    return np.clip(
        np.floor((np.asarray(n) + 1.0) / 2.0 * 255.0 + 0.5), 0, 255
    ).astype(np.uint8)


def decode_normal(color: np.ndarray) -> np.ndarray:
    return np.asarray(color, dtype=np.float64) / 255.0 * 2.0 - 1.0


def _edge_top_left(ax, ay, bx, by) -> bool:
    """Top-left rule for an edge a->b of a positively oriented triangle."""
    dy = by - ay
    dx = bx - ax
    return dy < 0 or (dy == 0 and dx > 0)


def rasterize(cam_pts: np.ndarray, faces: np.ndarray,
              intr: geom.CameraIntrinsics, viewport: Viewport,
              cull_backfaces: bool = False):
    """Z-buffer rasterization of camera-frame triangles over a viewport.

    Returns (depth (h, w) float64 +inf empty, face_index (h, w) int32 -1
    empty). Faces with any vertex at depth <= 1e-9 are skipped (no
    near-plane clipping), as are degenerate screen triangles.
    """
    h, w = viewport.height, viewport.width
    depth = np.full((h, w), np.inf)
    face_idx = np.full((h, w), -1, dtype=np.int32)
    if h == 0 or w == 0:
        return depth, face_idx

    z = cam_pts[:, 2]
    ok = z > geom.MIN_DEPTH
    u = np.where(ok, intr.fx * cam_pts[:, 0] / np.where(ok, z, 1.0) + intr.cx, 0.0)
    v = np.where(ok, intr.fy * cam_pts[:, 1] / np.where(ok, z, 1.0) + intr.cy, 0.0)
    lu = u - viewport.x0
    lv = v - viewport.y0

    for fi in range(faces.shape[0]):
        ia, ib, ic = faces[fi]
        if not (ok[ia] and ok[ib] and ok[ic]):
            continue
        if cull_backfaces:
            qa, qb, qc = cam_pts[ia], cam_pts[ib], cam_pts[ic]
            n = np.cross(qb - qa, qc - qa)
            if np.dot(n, qa) >= 0:
                continue
        ax, ay, za = lu[ia], lv[ia], z[ia]
        bx, by, zb = lu[ib], lv[ib], z[ib]
        cx_, cy, zc = lu[ic], lv[ic], z[ic]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx_ - ax)
        if area == 0.0:
            continue
        if area < 0.0:
            bx, by, zb, cx_, cy, zc = cx_, cy, zc, bx, by, zb
            area = -area

        x_lo = max(0, int(np.floor(min(ax, bx, cx_) - 0.5)))
        x_hi = min(w - 1, int(np.ceil(max(ax, bx, cx_) - 0.5)) + 1)
        y_lo = max(0, int(np.floor(min(ay, by, cy) - 0.5)))
        y_hi = min(h - 1, int(np.ceil(max(ay, by, cy) - 0.5)) + 1)
        if x_hi < x_lo or y_hi < y_lo:
            continue

        px = np.arange(x_lo, x_hi + 1) + 0.5
        py = (np.arange(y_lo, y_hi + 1) + 0.5)[:, None]
        # weights opposite A, B, C (edges B->C, C->A, A->B)
        wa = (cx_ - bx) * (py - by) - (cy - by) * (px - bx)
        wb = (ax - cx_) * (py - cy) - (ay - cy) * (px - cx_)
        wc = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        inside = (
            ((wa > 0) | ((wa == 0) & _edge_top_left(bx, by, cx_, cy)))
            & ((wb > 0) | ((wb == 0) & _edge_top_left(cx_, cy, ax, ay)))
            & ((wc > 0) | ((wc == 0) & _edge_top_left(ax, ay, bx, by)))
        )
        if not inside.any():
            continue
        inv_z = (wa / area) / za + (wb / area) / zb + (wc / area) / zc
        with np.errstate(divide="ignore"):
            zpix = np.where(inv_z > 0, 1.0 / np.where(inv_z > 0, inv_z, 1.0),
                            np.inf)
        sub = (slice(y_lo, y_hi + 1), slice(x_lo, x_hi + 1))
        closer = inside & (zpix < depth[sub])
        depth[sub][closer] = zpix[closer]
        face_idx[sub][closer] = fi
    return depth, face_idx


def fit_viewport(cad: CadModel, pose: geom.Pose, intr: geom.CameraIntrinsics,
                 margin: int = 6, clip_to_frame: bool = True) -> Viewport | None:
    """Bounding viewport of the projected mesh, or None if nothing is in
    front of the camera (or the projection misses the frame entirely)."""
    q = _camera_vertices(cad, pose)
    front = q[:, 2] > geom.MIN_DEPTH
    if not front.any():
        return None
    q = q[front]
    u = intr.fx * q[:, 0] / q[:, 2] + intr.cx
    v = intr.fy * q[:, 1] / q[:, 2] + intr.cy
    x0 = int(np.floor(u.min())) - margin
    y0 = int(np.floor(v.min())) - margin
    x1 = int(np.ceil(u.max())) + margin
    y1 = int(np.ceil(v.max())) + margin
    if clip_to_frame:
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(intr.width, x1), min(intr.height, y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return Viewport(x0, y0, x1 - x0, y1 - y0)


def render_normal_sketch(cad: CadModel, pose: geom.Pose,
                         intr: geom.CameraIntrinsics,
                         viewport: Viewport) -> NormalSketch:
    """Flat-shaded 2.5D sketch of the mesh under a pose."""
    cam_pts = _camera_vertices(cad, pose)
    if np.all(cam_pts[:, 2] <= geom.MIN_DEPTH):
        h, w = viewport.height, viewport.width
        logger.warning("normal sketch: mesh fully behind camera")
        return NormalSketch(
            color=np.zeros((h, w, 3), dtype=np.uint8),
            alpha=np.zeros((h, w), dtype=np.uint8),
            depth=np.full((h, w), np.inf),
            viewport=viewport,
            warning="fully-behind-camera",
            face_index=np.full((h, w), -1, dtype=np.int32),
        )
    depth, face_idx = rasterize(cam_pts, cad.faces, intr, viewport)
    normals = face_normals_camera(cad, pose)
    lut = encode_normal(normals)                      # (n_faces, 3)
    covered = face_idx >= 0
    color = np.zeros((viewport.height, viewport.width, 3), dtype=np.uint8)
    color[covered] = lut[face_idx[covered]]
    alpha = np.where(covered, 255, 0).astype(np.uint8)
    return NormalSketch(color=color, alpha=alpha, depth=depth,
                        viewport=viewport, face_index=face_idx)


def bake_appearance(cad: CadModel, source_crop: np.ndarray,
                    source_pose: geom.Pose, intr: geom.CameraIntrinsics,
                    crop_origin: tuple = (0, 0),
                    source_crop_ref: str = "") -> BakedAppearance:
    """Sample a per-face color from the source crop.

    A face is valid iff it is front-facing, its centroid projects inside
    the crop, and it is not occluded there (the crop-space depth pass,
    run without backface culling, shows this face or a surface within
    1e-3 m of the centroid depth). Valid faces store the bilinearly
    sampled crop color.

    Raises:
        NoValidFaceError: nothing usable to sample.
    """
    crop = np.asarray(source_crop)
    ch, cw = crop.shape[:2]
    ox, oy = crop_origin
    cam_pts = _camera_vertices(cad, source_pose)
    depth_vp = Viewport(int(ox), int(oy), cw, ch)
    depth_buf, face_buf = rasterize(cam_pts, cad.faces, intr, depth_vp)

    a, b, c = (cam_pts[cad.faces[:, i]] for i in range(3))
    centroids = (a + b + c) / 3.0
    winding_n = np.cross(b - a, c - a)
    front = np.einsum("ij,ij->i", winding_n, centroids) < 0

    n_faces = cad.faces.shape[0]
    colors = np.zeros((n_faces, 3))
    valid = np.zeros(n_faces, dtype=bool)
    crop_f = crop.astype(np.float64)
    for fi in range(n_faces):
        if not front[fi]:
            continue
        q = centroids[fi]
        if q[2] <= geom.MIN_DEPTH:
            continue
        u = intr.fx * q[0] / q[2] + intr.cx - ox
        v = intr.fy * q[1] / q[2] + intr.cy - oy
        if not (0.0 <= u < cw and 0.0 <= v < ch):
            continue
        col, row = int(u), int(v)
        vis_depth = depth_buf[row, col]
        if face_buf[row, col] != fi and q[2] > vis_depth + 1e-3:
            continue  # occluded by a nearer surface
        colors[fi] = _bilinear(crop_f, u, v)
        valid[fi] = True
    return BakedAppearance(colors, valid, source_pose, source_crop_ref)


def _bilinear(img: np.ndarray, u: float, v: float) -> np.ndarray:
    """Bilinear sample at continuous pixel coords (centers at +0.5)."""
    h, w = img.shape[:2]
    x = np.clip(u - 0.5, 0.0, w - 1.0)
    y = np.clip(v - 0.5, 0.0, h - 1.0)
    x0, y0 = int(x), int(y)
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def render_appearance(cad: CadModel, baked: BakedAppearance, pose: geom.Pose,
                      intr: geom.CameraIntrinsics, viewport: Viewport,
                      vehicle_id: int = -1) -> RenderedCrop:
    """Rasterize the mesh with baked per-face colors under a target pose.

    Invalid faces take the mean color of the valid ones. Backface culling
    is on here (unlike the bake's occlusion pass) since only outward
    faces carry meaningful appearance.
    """
    cam_pts = _camera_vertices(cad, pose)
    h, w = viewport.height, viewport.width
    if np.all(cam_pts[:, 2] <= geom.MIN_DEPTH):
        logger.warning("appearance render: mesh fully behind camera")
        return RenderedCrop(
            color=np.zeros((h, w, 3), dtype=np.uint8),
            alpha=np.zeros((h, w), dtype=np.uint8),
            depth=np.full((h, w), np.inf),
            viewport=viewport,
            warning="fully-behind-camera",
            face_index=np.full((h, w), -1, dtype=np.int32),
            vehicle_id=vehicle_id,
        )
    depth, face_idx = rasterize(cam_pts, cad.faces, intr, viewport,
                                cull_backfaces=True)
    fill = baked.face_colors[baked.face_valid].mean(axis=0)
    lut = np.where(baked.face_valid[:, None], baked.face_colors, fill)
    lut8 = np.clip(np.floor(lut + 0.5), 0, 255).astype(np.uint8)
    covered = face_idx >= 0
    color = np.zeros((h, w, 3), dtype=np.uint8)
    color[covered] = lut8[face_idx[covered]]
    alpha = np.where(covered, 255, 0).astype(np.uint8)
    return RenderedCrop(color=color, alpha=alpha, depth=depth,
                        viewport=viewport, face_index=face_idx,
                        vehicle_id=vehicle_id)


def save_depth_sidecar(depth: np.ndarray, path) -> None:
    """Row-major float32 depth dump next to a rendered image."""
    np.asarray(depth, dtype=np.float32).tofile(path)


def load_depth_sidecar(path, width: int, height: int) -> np.ndarray:
    data = np.fromfile(path, dtype=np.float32)
    return data.reshape(height, width)


def save_render(crop: NormalSketch, stem) -> tuple:
    """Persist a render as `<stem>.png` (RGBA) plus `<stem>.depth`
    (row-major float32); returns the two paths."""
    from PIL import Image

    stem = str(stem)
    rgba = np.dstack([crop.color, crop.alpha])
    Image.fromarray(rgba, mode="RGBA").save(stem + ".png")
    save_depth_sidecar(crop.depth, stem + ".depth")
    return stem + ".png", stem + ".depth"


def load_render(stem) -> tuple:
    """Inverse of save_render: returns (color, alpha, depth) arrays."""
    from PIL import Image

    stem = str(stem)
    with Image.open(stem + ".png") as img:
        rgba = np.asarray(img.convert("RGBA"))
    depth = load_depth_sidecar(stem + ".depth", rgba.shape[1], rgba.shape[0])
    return rgba[..., :3], rgba[..., 3], depth
