"""Scene bundle loading/validation and generated-output persistence.

A bundle is a directory with a `scene.manifest` key-value file naming its
parts:

    frames_dir = frames            # frame_000000.png, ...
    tracks = tracks.csv            # frame,id,x,y,w,h,confidence
    keypoints = keypoints.csv      # frame,vehicle_id,name,u,v,conf,visible
    homography = homography.txt    # 9 reals, row-major, pixel -> world
    intrinsics = intrinsics.txt    # optional fx/fy/cx/cy/width/height
    cad_assignments = cads.csv     # vehicle_id,cad_id
    cad_dir = cads                 # optional OBJ + keypoints overrides
    fps = 10
    timestep = 0.2
    horizon = 1.0

Missing intrinsics fall back to fx = fy = width with a centered principal
point; the bundle is then flagged "approximate intrinsics" and every
downstream report carries the flag.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import geom
from .carshapes import builtin_cad
from .errors import BundleParseError, CrossReferenceError, MissingFileError
from .posesolve import Keypoint2D
from .render import CadModel, load_cad
from .traj import TrackEntry, VehicleTrack

logger = logging.getLogger(__name__)

MANIFEST_NAME = "scene.manifest"
FRAME_PATTERN = "frame_{:06d}.png"


def _parse_keyvalue(path: Path) -> dict:
    out = {}
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise MissingFileError(str(path)) from exc
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise BundleParseError(f"{path.name}:{ln}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def _format_keyvalue(pairs) -> str:
    return "\n".join(f"{k} = {v}" for k, v in pairs) + "\n"


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except FileNotFoundError as exc:
        raise MissingFileError(str(path)) from exc


def save_image(arr: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def read_tracks_csv(path: Path) -> dict:
    """Rows `frame,id,x,y,w,h,confidence` grouped into VehicleTracks."""
    rows = {}
    try:
        fh = open(path, newline="")
    except FileNotFoundError as exc:
        raise MissingFileError(str(path)) from exc
    with fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 7:
                raise BundleParseError(
                    f"{path.name}:{ln}: expected 7 columns, got {len(row)}"
                )
            try:
                frame = int(row[0])
                vid = int(row[1])
                bbox = tuple(float(v) for v in row[2:6])
                conf = float(row[6])
            except ValueError as exc:
                raise BundleParseError(f"{path.name}:{ln}: {exc}") from exc
            rows.setdefault(vid, []).append(TrackEntry(frame, bbox, conf))
    return {
        vid: VehicleTrack(vid, tuple(sorted(entries, key=lambda e: e.frame)))
        for vid, entries in rows.items()
    }


def write_tracks_csv(tracks: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for vid in sorted(tracks):
            for e in tracks[vid].entries:
                w.writerow([e.frame, vid, *[repr(float(v)) for v in e.bbox],
                            repr(float(e.confidence))])


def read_keypoints_csv(path: Path) -> dict:
    """Rows keyed by (frame, vehicle_id); 12 named entries each."""
    out = {}
    try:
        fh = open(path, newline="")
    except FileNotFoundError as exc:
        raise MissingFileError(str(path)) from exc
    with fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 7:
                raise BundleParseError(
                    f"{path.name}:{ln}: expected 7 columns, got {len(row)}"
                )
            try:
                key = (int(row[0]), int(row[1]))
                kp = Keypoint2D(row[2].strip(),
                                (float(row[3]), float(row[4])),
                                confidence=float(row[5]),
                                visible=bool(int(row[6])))
            except ValueError as exc:
                raise BundleParseError(f"{path.name}:{ln}: {exc}") from exc
            out.setdefault(key, []).append(kp)
    return {k: tuple(v) for k, v in out.items()}


def write_keypoints_csv(keypoints: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for (frame, vid) in sorted(keypoints):
            for kp in keypoints[(frame, vid)]:
                w.writerow([frame, vid, kp.name,
                            repr(float(kp.position[0])),
                            repr(float(kp.position[1])),
                            repr(float(kp.confidence)), int(kp.visible)])


def read_homography(path: Path) -> geom.GroundHomography:
    """Nine whitespace-separated reals, row-major, pixel -> world."""
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise MissingFileError(str(path)) from exc
    values = []
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        for token in stripped.split():
            try:
                values.append(float(token))
            except ValueError as exc:
                raise BundleParseError(f"{path.name}:{ln}: {exc}") from exc
    if len(values) != 9:
        raise BundleParseError(
            f"{path.name}: expected 9 values, got {len(values)}"
        )
    return geom.GroundHomography(np.array(values).reshape(3, 3))


def write_homography(h: geom.GroundHomography, path: Path) -> None:
    lines = ["# pixel -> world ground plane (meters), row-major 3x3"]
    for row in h.h:
        lines.append(" ".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_intrinsics(path: Path) -> geom.CameraIntrinsics:
    kv = _parse_keyvalue(path)
    try:
        return geom.CameraIntrinsics(
            fx=float(kv["fx"]), fy=float(kv["fy"]),
            cx=float(kv["cx"]), cy=float(kv["cy"]),
            width=int(kv["width"]), height=int(kv["height"]))
    except KeyError as exc:
        raise BundleParseError(f"{path.name}: missing key {exc}") from exc
    except ValueError as exc:
        raise BundleParseError(f"{path.name}: {exc}") from exc


def write_intrinsics(intr: geom.CameraIntrinsics, path: Path) -> None:
    path.write_text(_format_keyvalue([
        ("fx", repr(intr.fx)), ("fy", repr(intr.fy)),
        ("cx", repr(intr.cx)), ("cy", repr(intr.cy)),
        ("width", intr.width), ("height", intr.height)]))


def read_cad_assignments(path: Path) -> dict:
    out = {}
    try:
        fh = open(path, newline="")
    except FileNotFoundError as exc:
        raise MissingFileError(str(path)) from exc
    with fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                out[int(row[0])] = int(row[1])
            except (ValueError, IndexError) as exc:
                raise BundleParseError(f"{path.name}:{ln}: {exc}") from exc
    return out


def write_cad_assignments(assignments: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for vid in sorted(assignments):
            w.writerow([vid, assignments[vid]])


@dataclass(eq=False)
class SceneBundle:
    """Validated scene bundle; frame pixels load lazily."""

    root: Path
    frames: dict                      # frame index -> Path
    tracks: dict                      # vehicle_id -> VehicleTrack
    keypoints: dict                   # (frame, vehicle_id) -> (Keypoint2D,)
    homography: geom.GroundHomography
    intrinsics: geom.CameraIntrinsics
    approximate_intrinsics: bool
    cad_assignments: dict             # vehicle_id -> cad id
    cad_dir: Path | None
    fps: float
    timestep: float
    horizon: float
    _cad_cache: dict = field(default_factory=dict)

    @property
    def frame_size(self) -> tuple:
        return (self.intrinsics.width, self.intrinsics.height)

    def load_frame(self, index: int) -> np.ndarray:
        if index not in self.frames:
            raise MissingFileError(f"frame {index} not in bundle")
        return load_image(self.frames[index])

    def frame_indices(self) -> list:
        return sorted(self.frames)

    def keypoints_for(self, frame: int, vehicle_id: int):
        return self.keypoints.get((frame, vehicle_id), ())

    def cad_for(self, vehicle_id: int) -> CadModel:
        cad_id = self.cad_assignments.get(vehicle_id, 1)
        if cad_id not in self._cad_cache:
            self._cad_cache[cad_id] = self._load_cad(cad_id)
        return self._cad_cache[cad_id]

    def _load_cad(self, cad_id: int) -> CadModel:
        if self.cad_dir is not None:
            obj = self.cad_dir / f"cad_{cad_id:02d}.obj"
            kps = self.cad_dir / f"cad_{cad_id:02d}.keypoints"
            if obj.exists() and kps.exists():
                return load_cad(obj.read_text(), kps.read_text(), cad_id)
        return builtin_cad(cad_id)

    @property
    def derived_dir(self) -> Path:
        return self.root / "derived"

    def bundle_hash(self) -> str:
        digest = hashlib.sha256((self.root / MANIFEST_NAME).read_bytes())
        return digest.hexdigest()[:16]


def load_bundle(path) -> SceneBundle:
    """Load and validate a scene bundle directory.

    Raises:
        MissingFileError: directory or referenced file absent.
        BundleParseError: malformed file content (with line number).
        CrossReferenceError: dangling frame or track references.
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not root.is_dir() or not manifest_path.exists():
        raise MissingFileError(f"no bundle manifest at {manifest_path}")
    kv = _parse_keyvalue(manifest_path)
    for required in ("frames_dir", "tracks", "homography"):
        if required not in kv:
            raise BundleParseError(
                f"{MANIFEST_NAME}: missing required key '{required}'"
            )

    frames_dir = root / kv["frames_dir"]
    if not frames_dir.is_dir():
        raise MissingFileError(str(frames_dir))
    frames = {}
    for p in sorted(frames_dir.glob("frame_*.png")):
        try:
            frames[int(p.stem.split("_")[1])] = p
        except (IndexError, ValueError):
            logger.warning("skipping unrecognized frame file %s", p.name)
    if not frames:
        raise MissingFileError(f"{frames_dir} holds no frame_*.png files")

    tracks = read_tracks_csv(root / kv["tracks"])
    keypoints = {}
    if "keypoints" in kv:
        keypoints = read_keypoints_csv(root / kv["keypoints"])
    homography = read_homography(root / kv["homography"])

    approximate = "intrinsics" not in kv
    if approximate:
        with Image.open(next(iter(sorted(frames.values())))) as img:
            width, height = img.size
        intrinsics = geom.CameraIntrinsics.approximate(width, height)
        logger.warning("bundle %s: no intrinsics file, using approximate "
                       "intrinsics fx=fy=%d", root.name, width)
    else:
        intrinsics = read_intrinsics(root / kv["intrinsics"])

    cad_assignments = {}
    if "cad_assignments" in kv:
        cad_assignments = read_cad_assignments(root / kv["cad_assignments"])
    cad_dir = root / kv["cad_dir"] if "cad_dir" in kv else None

    # cross references
    for vid, track in tracks.items():
        for e in track.entries:
            if e.frame not in frames:
                raise CrossReferenceError(
                    f"track {vid} references missing frame {e.frame}"
                )
    for (frame, vid) in keypoints:
        track = tracks.get(vid)
        if track is None or track.entry_at(frame) is None:
            raise CrossReferenceError(
                f"keypoints reference missing track entry "
                f"(frame {frame}, vehicle {vid})"
            )
    for vid, cad_id in cad_assignments.items():
        if not 1 <= cad_id <= 10:
            raise CrossReferenceError(
                f"vehicle {vid}: cad id {cad_id} outside 1..10"
            )
        if vid not in tracks:
            raise CrossReferenceError(
                f"cad assignment references unknown vehicle {vid}"
            )

    return SceneBundle(
        root=root, frames=frames, tracks=tracks, keypoints=keypoints,
        homography=homography, intrinsics=intrinsics,
        approximate_intrinsics=approximate,
        cad_assignments=cad_assignments, cad_dir=cad_dir,
        fps=float(kv.get("fps", 10.0)),
        timestep=float(kv.get("timestep", 0.2)),
        horizon=float(kv.get("horizon", 1.0)),
    )


# --- generated outputs ---

@dataclass(frozen=True)
class ClipFrameRef:
    path: str                 # relative to the clip directory
    offset: float             # seconds into the future
    frame_index: int          # aligned bundle frame index
    placed: tuple = ()        # ((vehicle_id, x0, y0, w, h, depth), ...)


@dataclass(frozen=True)
class PlanSummary:
    vehicle_id: int
    cad_id: int
    residual: float
    iterations: int
    yaw_delta_deg: float
    n_poses: int


@dataclass(frozen=True)
class OutputManifest:
    clip_id: str
    base_frame: int
    timestep: float
    horizon: float
    mode: str
    tool_version: str
    options_hash: str
    approximate_intrinsics: bool
    frames: tuple = ()        # ClipFrameRef
    plans: tuple = ()         # PlanSummary


def options_hash(options: dict) -> str:
    canon = "\n".join(f"{k}={options[k]}" for k in sorted(options))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def write_outputs(frames, manifest: OutputManifest, out_dir) -> OutputManifest:
    """Persist clip frames as PNG plus a `clip.manifest`; returns the
    manifest with frame paths filled in. Every listed file is verified to
    exist after the write."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    refs = []
    for k, (image, ref) in enumerate(zip(frames, manifest.frames)):
        name = ref.path or f"frame_{k:03d}.png"
        save_image(image, out / name)
        refs.append(replace(ref, path=name))
    manifest = replace(manifest, frames=tuple(refs))
    (out / "clip.manifest").write_text(format_output_manifest(manifest))
    for ref in manifest.frames:
        if not (out / ref.path).exists():
            raise MissingFileError(f"output frame {ref.path} was not written")
    return manifest


def format_output_manifest(m: OutputManifest) -> str:
    pairs = [
        ("clip_id", m.clip_id),
        ("base_frame", m.base_frame),
        ("timestep", repr(m.timestep)),
        ("horizon", repr(m.horizon)),
        ("mode", m.mode),
        ("tool_version", m.tool_version),
        ("options_hash", m.options_hash),
        ("approximate_intrinsics", str(m.approximate_intrinsics).lower()),
        ("frame_count", len(m.frames)),
    ]
    for k, ref in enumerate(m.frames):
        pairs.append((f"frame.{k}.path", ref.path))
        pairs.append((f"frame.{k}.offset", repr(ref.offset)))
        pairs.append((f"frame.{k}.index", ref.frame_index))
        placed = ";".join(
            f"{vid}:{x0},{y0},{w},{h}:{repr(float(d))}"
            for vid, x0, y0, w, h, d in ref.placed
        )
        pairs.append((f"frame.{k}.placed", placed))
    pairs.append(("vehicle_count", len(m.plans)))
    for k, plan in enumerate(m.plans):
        pairs.append((f"vehicle.{k}.id", plan.vehicle_id))
        pairs.append((f"vehicle.{k}.cad", plan.cad_id))
        pairs.append((f"vehicle.{k}.residual", repr(plan.residual)))
        pairs.append((f"vehicle.{k}.iterations", plan.iterations))
        pairs.append((f"vehicle.{k}.yaw_delta_deg", repr(plan.yaw_delta_deg)))
        pairs.append((f"vehicle.{k}.poses", plan.n_poses))
    return _format_keyvalue(pairs)


def load_output_manifest(clip_dir) -> OutputManifest:
    path = Path(clip_dir) / "clip.manifest"
    kv = _parse_keyvalue(path)
    try:
        frames = []
        for k in range(int(kv["frame_count"])):
            placed = []
            raw = kv.get(f"frame.{k}.placed", "")
            if raw:
                for item in raw.split(";"):
                    vid_s, rect, depth_s = item.split(":")
                    x0, y0, w, h = (int(v) for v in rect.split(","))
                    placed.append((int(vid_s), x0, y0, w, h, float(depth_s)))
            frames.append(ClipFrameRef(
                path=kv[f"frame.{k}.path"],
                offset=float(kv[f"frame.{k}.offset"]),
                frame_index=int(kv[f"frame.{k}.index"]),
                placed=tuple(placed)))
        plans = []
        for k in range(int(kv["vehicle_count"])):
            plans.append(PlanSummary(
                vehicle_id=int(kv[f"vehicle.{k}.id"]),
                cad_id=int(kv[f"vehicle.{k}.cad"]),
                residual=float(kv[f"vehicle.{k}.residual"]),
                iterations=int(kv[f"vehicle.{k}.iterations"]),
                yaw_delta_deg=float(kv[f"vehicle.{k}.yaw_delta_deg"]),
                n_poses=int(kv[f"vehicle.{k}.poses"])))
        return OutputManifest(
            clip_id=kv["clip_id"],
            base_frame=int(kv["base_frame"]),
            timestep=float(kv["timestep"]),
            horizon=float(kv["horizon"]),
            mode=kv["mode"],
            tool_version=kv["tool_version"],
            options_hash=kv["options_hash"],
            approximate_intrinsics=kv["approximate_intrinsics"] == "true",
            frames=tuple(frames),
            plans=tuple(plans))
    except KeyError as exc:
        raise BundleParseError(f"{path.name}: missing key {exc}") from exc


def read_polylines(path) -> list:
    """User trajectory file: one polyline per line as `u,v` pixel pairs
    separated by whitespace; '#' lines are comments."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise MissingFileError(str(path)) from exc
    polylines = []
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        points = []
        for token in stripped.split():
            parts = token.split(",")
            if len(parts) != 2:
                raise BundleParseError(
                    f"{path.name}:{ln}: expected 'u,v', got {token!r}"
                )
            try:
                points.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise BundleParseError(f"{path.name}:{ln}: {exc}") from exc
        if len(points) < 2:
            raise BundleParseError(
                f"{path.name}:{ln}: polyline needs at least 2 points"
            )
        polylines.append(points)
    return polylines


def save_background(image: np.ndarray, valid_mask: np.ndarray,
                    directory) -> tuple:
    """Persist the background image and valid-mask into a directory
    (conventionally the bundle's derived-data dir)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    img_path = directory / "background.png"
    mask_path = directory / "background_valid.png"
    save_image(image, img_path)
    save_image(np.where(valid_mask, 255, 0).astype(np.uint8), mask_path)
    return img_path, mask_path
