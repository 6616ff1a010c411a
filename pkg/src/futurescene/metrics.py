"""Evaluation metrics: MSE, SSIM, FID, IS and the tight-crop protocol.

MSE and SSIM run on the crops directly. FID and IS consume externally
extracted per-crop feature vectors / class probabilities (this package
never runs a classifier); both arrive through a small binary file format
(magic, N, D header then row-major float32).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidDistributionError,
    MissingHorizonError,
    NonPsdCovarianceError,
)

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"FSFT"


@dataclass(frozen=True, eq=False)
class CropPair:
    """Target and predicted tight crops of one vehicle at one horizon."""

    target: np.ndarray
    predicted: np.ndarray
    bbox: tuple = (0, 0, 0, 0)
    vehicle_id: int = -1
    horizon_offset: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.target)
        p = np.asarray(self.predicted)
        if t.shape != p.shape:
            raise DimensionMismatchError(
                f"crop shapes differ: {t.shape} vs {p.shape}"
            )
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "predicted", p)


@dataclass(frozen=True)
class SsimConstants:
    """Stabilization constants and window spec. Defaults use the
    conventional k1 = 0.01, k2 = 0.03 at 8-bit dynamic range with an
    11x11 Gaussian window (sigma 1.5)."""

    c1: float = (0.01 * 255.0) ** 2
    c2: float = (0.03 * 255.0) ** 2
    dynamic_range: float = 255.0
    window: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM constants must be positive")


@dataclass(frozen=True, eq=False)
class FeatureStats:
    """Sample mean and covariance of a feature population."""

    m: np.ndarray
    c: np.ndarray
    n: int

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(-1)
        c = np.asarray(self.c, dtype=np.float64)
        if c.shape != (m.size, m.size):
            raise DimensionMismatchError("covariance shape does not match mean")
        if np.abs(c - c.T).max() > 1e-9:
            raise ValueError("covariance must be symmetric")
        if self.n < 2:
            raise ValueError("need at least 2 samples")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "c", c)


@dataclass(frozen=True, eq=False)
class ClassProbabilities:
    """N rows of class posteriors p(y | x_i)."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise InvalidDistributionError("need an N x K probability matrix")
        if np.any(rows < 0):
            raise InvalidDistributionError("negative probabilities")
        if np.abs(rows.sum(axis=1) - 1.0).max() > 1e-9:
            raise InvalidDistributionError("rows must sum to 1")
        object.__setattr__(self, "rows", rows)


def mse(pair: CropPair) -> float:
    """Mean over pixels and channels of squared 8-bit differences."""
    a = pair.target.astype(np.float64)
    b = pair.predicted.astype(np.float64)
    return float(np.mean((a - b) ** 2))


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma; already-gray images pass through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(pair: CropPair, k: SsimConstants | None = None) -> float:
    """Structural similarity on grayscale crops.

    Mean over sliding Gaussian windows; crops smaller than the window
    fall back to global statistics over the whole crop.
    """
    k = k or SsimConstants()
    a = to_grayscale(pair.target)
    b = to_grayscale(pair.predicted)
    h, w = a.shape
    if h < k.window or w < k.window:
        return _ssim_global(a, b, k)
    kern = _gaussian_kernel(k.window, k.sigma)
    wa = np.lib.stride_tricks.sliding_window_view(a, (k.window, k.window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (k.window, k.window))
    mu_a = np.tensordot(wa, kern, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(wb, kern, axes=([2, 3], [0, 1]))
    ea2 = np.tensordot(wa * wa, kern, axes=([2, 3], [0, 1]))
    eb2 = np.tensordot(wb * wb, kern, axes=([2, 3], [0, 1]))
    eab = np.tensordot(wa * wb, kern, axes=([2, 3], [0, 1]))
    var_a = ea2 - mu_a * mu_a
    var_b = eb2 - mu_b * mu_b
    cov = eab - mu_a * mu_b
    smap = ((2.0 * mu_a * mu_b + k.c1) * (2.0 * cov + k.c2)) / (
        (mu_a ** 2 + mu_b ** 2 + k.c1) * (var_a + var_b + k.c2)
    )
    return float(smap.mean())


def _ssim_global(a: np.ndarray, b: np.ndarray, k: SsimConstants) -> float:
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    return float(
        ((2.0 * mu_a * mu_b + k.c1) * (2.0 * cov + k.c2))
        / ((mu_a ** 2 + mu_b ** 2 + k.c1) * (var_a + var_b + k.c2))
    )


def feature_stats(features: np.ndarray) -> FeatureStats:
    """Mean and unbiased covariance of an N x D feature matrix."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise DimensionMismatchError("need an N x D matrix with N >= 2")
    m = f.mean(axis=0)
    c = np.cov(f, rowvar=False, ddof=1)
    c = np.atleast_2d(c)
    return FeatureStats(m=m, c=(c + c.T) / 2.0, n=f.shape[0])


def _psd_sqrt_eigvals(sym: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, clamped per the tolerance
    policy: below -1e-8 is an error, [-1e-8, 0) clamps to 0."""
    w = np.linalg.eigvalsh(sym)
    if w.min() < -1e-8:
        raise NonPsdCovarianceError(
            f"covariance eigenvalue {w.min():.3e} below -1e-8"
        )
    return np.sqrt(np.clip(w, 0.0, None))


def _psd_sqrt(sym: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(sym)
    if w.min() < -1e-8:
        raise NonPsdCovarianceError(
            f"covariance eigenvalue {w.min():.3e} below -1e-8"
        )
    s = np.sqrt(np.clip(w, 0.0, None))
    return (v * s) @ v.T


def fid(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between the two Gaussian fits:
    |m_a - m_b|^2 + Tr(C_a + C_b - 2 (C_a C_b)^(1/2)).

    The matrix square root is taken through the symmetrized product
    C_a^(1/2) C_b C_a^(1/2), whose eigenvalues equal those of C_a C_b.
    """
    if a.m.shape != b.m.shape:
        raise DimensionMismatchError("feature dimensions differ")
    ra = _psd_sqrt(a.c)
    inner = ra @ b.c @ ra
    cross = _psd_sqrt_eigvals((inner + inner.T) / 2.0).sum()
    d = a.m - b.m
    value = float(d @ d + np.trace(a.c) + np.trace(b.c) - 2.0 * cross)
    return max(value, 0.0)


def inception_score(p: ClassProbabilities, splits: int = 1) -> float:
    """exp of the mean KL divergence between per-sample posteriors and
    their empirical marginal; 0 log(0/q) is taken as 0."""
    rows = p.rows
    n = rows.shape[0]
    if splits < 1 or splits > n:
        raise ValueError("splits must be in 1..N")
    scores = []
    bounds = np.linspace(0, n, splits + 1).astype(int)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        part = rows[lo:hi]
        marginal = part.mean(axis=0)
        ratio = np.zeros_like(part)
        nz = part > 0.0
        ratio[nz] = part[nz] * np.log(part[nz] / marginal[np.nonzero(nz)[1]])
        scores.append(np.exp(ratio.sum(axis=1).mean()))
    return float(np.mean(scores))


# --- feature / probability files ---

def write_feature_file(path, data: np.ndarray) -> None:
    """Binary layout: magic 'FSFT', uint32 N, uint32 D, float32 row-major."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("feature data must be N x D")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_feature_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        n, d = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * n * d), dtype=np.float32)
    if data.size != n * d:
        raise ValueError(f"{path}: truncated feature file")
    return data.reshape(n, d).astype(np.float64)


# --- tight-crop clip evaluation ---

@dataclass(frozen=True)
class HorizonResult:
    offset: float
    n_crops: int
    mse: float | None
    ssim: float | None
    fid: float | None
    inception: float | None
    notes: tuple = ()


@dataclass(frozen=True)
class ClipReport:
    horizons: tuple
    timestep: float

    def offsets(self):
        return [h.offset for h in self.horizons]


def extract_crop(frame: np.ndarray, bbox) -> np.ndarray:
    x, y, w, h = bbox
    fh, fw = frame.shape[:2]
    x0 = max(0, int(np.floor(x)))
    y0 = max(0, int(np.floor(y)))
    x1 = min(fw, int(np.ceil(x + w)))
    y1 = min(fh, int(np.ceil(y + h)))
    return frame[y0:y1, x0:x1]


def evaluate_clip(predicted_frames, gt_frames, tracks, offsets,
                  features=None, probabilities=None,
                  ssim_constants: SsimConstants | None = None) -> ClipReport:
    """Tight-crop evaluation of a predicted clip against ground truth.

    predicted_frames and gt_frames are aligned lists, one per horizon
    offset. Crops are taken at the ground-truth bounding box of every
    tracked vehicle present at that horizon. MSE/SSIM aggregate as the
    per-crop mean; FID/IS use externally supplied features (dict keyed by
    offset holding (target_features, predicted_features)) and
    probabilities (dict keyed by offset holding predicted class
    posteriors); missing entries skip those metrics with a note.

    Raises:
        MissingHorizonError: no frames for a requested offset.
    """
    if len(predicted_frames) != len(offsets) or len(gt_frames) != len(offsets):
        raise MissingHorizonError(
            f"need one frame pair per offset ({len(offsets)} offsets, "
            f"{len(predicted_frames)} predicted, {len(gt_frames)} truth)"
        )
    results = []
    for k, offset in enumerate(offsets):
        pred = np.asarray(predicted_frames[k])
        gt = np.asarray(gt_frames[k])
        notes = []
        pairs = []
        for track, frame_idx in tracks:
            entry = track.entry_at(frame_idx[k])
            if entry is None:
                continue
            tcrop = extract_crop(gt, entry.bbox)
            pcrop = extract_crop(pred, entry.bbox)
            if tcrop.size == 0:
                continue
            pairs.append(CropPair(tcrop, pcrop, entry.bbox,
                                  track.vehicle_id, offset))
        if not pairs:
            notes.append("no crops at this horizon")
            mse_val = ssim_val = None
        else:
            mse_val = float(np.mean([mse(p) for p in pairs]))
            ssim_val = float(np.mean([ssim(p, ssim_constants) for p in pairs]))
        fid_val = None
        if features and offset in features:
            tgt, prd = features[offset]
            fid_val = fid(feature_stats(tgt), feature_stats(prd))
        elif features is not None:
            notes.append("fid skipped: no feature file")
        is_val = None
        if probabilities and offset in probabilities:
            is_val = inception_score(ClassProbabilities(probabilities[offset]))
        elif probabilities is not None:
            notes.append("is skipped: no probability file")
        results.append(HorizonResult(
            offset=offset, n_crops=len(pairs), mse=mse_val, ssim=ssim_val,
            fid=fid_val, inception=is_val, notes=tuple(notes)))
    timestep = offsets[1] - offsets[0] if len(offsets) > 1 else offsets[0]
    return ClipReport(horizons=tuple(results), timestep=float(timestep))
