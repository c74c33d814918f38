"""Distribution distances between real and generated images.

FID: squared mean distance plus trace term through the principal square
root of the covariance product, evaluated in the symmetrized form
S_r^(1/2) S_g S_r^(1/2) (same trace, symmetric eigensolver).  KID: unbiased
squared MMD with a polynomial kernel, averaged over seeded subsample blocks.

Features come from deterministic built-in extractors (an 8x8 area pool or a
fixed random projection) or from an external feature file; absolute values
are not comparable to scores computed with a pretrained embedding.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .dataset import _resize_chw
from .errors import (ConfigError, ContractError, CorruptionError, FormatError,
                     InsufficientDataError, NumericError, ShapeError,
                     ValidationError)
from .rng import Rng, derive_seed

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1

PROVENANCE_NOTE = ("features from a built-in extractor; absolute FID/KID values "
                   "are not comparable to pretrained-Inception scores")


@dataclass
class FeatureSet:
    matrix: np.ndarray  # [n, d] float64
    extractor_id: str

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError("feature matrix must be 2-D [n, d]")
        if not np.isfinite(self.matrix).all():
            raise ValidationError("feature matrix contains non-finite values")


@dataclass
class GaussianStats:
    mu: np.ndarray     # [d]
    sigma: np.ndarray  # [d, d]

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ShapeError(f"sigma must be [{d},{d}], got {self.sigma.shape}")
        if np.abs(self.sigma - self.sigma.T).max(initial=0.0) > 1e-10:
            raise ValidationError("sigma is not symmetric")


@dataclass
class KidConfig:
    degree: int = 3
    offset: float = 1.0
    scale: float | None = None     # None -> 1/d
    block_size: int | None = None  # None -> min(n, 100)
    num_blocks: int = 10

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigError("kernel degree must be >= 1")
        if self.block_size is not None and self.block_size < 2:
            raise ConfigError("block_size must be >= 2")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")


@dataclass
class MetricReport:
    fid: float
    kid_mean: float
    kid_std: float
    n_real: int
    n_gen: int
    extractor_id: str
    provenance: str = PROVENANCE_NOTE

    def to_dict(self) -> dict:
        return {
            "fid": self.fid,
            "kid_mean": self.kid_mean,
            "kid_std": self.kid_std,
            "n_real": self.n_real,
            "n_gen": self.n_gen,
            "extractor_id": self.extractor_id,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        # one-row table mirroring the headline metric layout
        return f"Metric,FID,KID\nResults,{self.fid:.2f},{self.kid_mean:.3f}\n"


# ---------------------------------------------------------------------------
# feature extraction


def _as_image_array(images) -> np.ndarray:
    arr = images.data if hasattr(images, "data") else np.asarray(images)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ShapeError(f"expected images [n,3,R,R], got {arr.shape}")
    return arr


def extract_features(images, extractor: str) -> FeatureSet:
    """Deterministic embedding of [n,3,R,R] images.

    Built-ins: "pool" (area-average to 8x8, flattened, d=192) and
    "randproj-K" (fixed seeded Gaussian projection of raw pixels to K dims).
    """
    arr = _as_image_array(images)
    n = arr.shape[0]
    if n < 2:
        raise InsufficientDataError("need at least 2 images to build a feature set")
    if extractor == "pool":
        rows = [_resize_chw(img, 8, 8).reshape(-1) for img in arr]
        return FeatureSet(np.stack(rows), "pool")
    if extractor.startswith("randproj-"):
        try:
            k = int(extractor.split("-", 1)[1])
        except ValueError:
            raise ValidationError(f"bad random-projection extractor id: {extractor!r}") from None
        if k < 1:
            raise ValidationError("projection dimension must be >= 1")
        d_in = int(np.prod(arr.shape[1:]))
        proj = Rng(derive_seed("randproj", k, d_in)).normal((d_in, k)) / np.sqrt(d_in)
        return FeatureSet(arr.reshape(n, d_in) @ proj, extractor)
    raise ValidationError(f"unknown extractor: {extractor!r}")


def gaussian_stats(features: FeatureSet) -> GaussianStats:
    """Column mean and sample covariance (denominator n-1)."""
    x = features.matrix
    n = x.shape[0]
    if n < 2:
        raise InsufficientDataError("need n >= 2 rows for a sample covariance")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = (sigma + sigma.T) / 2.0
    return GaussianStats(mu=mu, sigma=sigma)


# ---------------------------------------------------------------------------
# FID


def sqrtm_spd(a: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix by eigendecomposition.

    Slightly negative eigenvalues (numerical noise) are clamped to zero.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    tol = 1e-8 * max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > tol:
        raise ContractError("matrix is not symmetric; symmetrize the argument "
                            "(use S_r^(1/2) S_g S_r^(1/2) for covariance products)")
    try:
        eigval, eigvec = np.linalg.eigh((a + a.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed ({exc}); retry with +1e-6*I jitter") from exc
    root = (eigvec * np.sqrt(np.clip(eigval, 0.0, None))) @ eigvec.T
    return (root + root.T) / 2.0


def fid(real: GaussianStats, gen: GaussianStats) -> float:
    """Frechet distance between two Gaussian fits of feature distributions.

    The cross term tr((S_r^(1/2) S_g S_r^(1/2))^(1/2)) is evaluated as the
    nuclear norm of S_r^(1/2) S_g^(1/2): same matrix, but the singular values
    come out at full precision instead of through an eigenproblem whose
    conditioning was squared (rank-deficient covariances would otherwise
    push the result visibly below zero).
    """
    if real.mu.shape != gen.mu.shape:
        raise ShapeError(f"feature dimensions differ: {real.mu.shape} vs {gen.mu.shape}")
    delta = real.mu - gen.mu
    half_product = sqrtm_spd(real.sigma) @ sqrtm_spd(gen.sigma)
    try:
        cross_trace = float(np.linalg.svd(half_product, compute_uv=False).sum())
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed in FID cross term: {exc}") from exc
    value = float(delta @ delta + np.trace(real.sigma) + np.trace(gen.sigma)
                  - 2.0 * cross_trace)
    if value < -1e-8:
        raise NumericError(f"FID evaluated to {value}, below the numerical floor")
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# KID


def _poly_kernel(x: np.ndarray, y: np.ndarray, degree: int, offset: float,
                 scale: float) -> np.ndarray:
    return (scale * (x @ y.T) + offset) ** degree


def mmd2_unbiased(x: np.ndarray, y: np.ndarray, degree: int = 3,
                  offset: float = 1.0, scale: float | None = None) -> float:
    """Unbiased squared MMD with the polynomial kernel.

    Within-set sums exclude the i == j diagonal; the cross term uses all
    pairs.  May be negative: that is the price of unbiasedness.
    """
    m, l = x.shape[0], y.shape[0]
    if m < 2 or l < 2:
        raise InsufficientDataError("unbiased MMD^2 needs >= 2 rows per set")
    if scale is None:
        scale = 1.0 / x.shape[1]
    kxx = _poly_kernel(x, x, degree, offset, scale)
    kyy = _poly_kernel(y, y, degree, offset, scale)
    kxy = _poly_kernel(x, y, degree, offset, scale)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (l * (l - 1))
    return float(term_x + term_y - 2.0 * kxy.sum() / (m * l))


def kid(real: FeatureSet, gen: FeatureSet, cfg: KidConfig | None = None,
        seed: int = 0) -> tuple[float, float]:
    """Block-averaged unbiased MMD^2: (mean, std over blocks).

    Each block is a seeded subsample without replacement from both sets;
    indices are sorted so a full-size single block reproduces the plain
    estimator exactly.
    """
    cfg = cfg or KidConfig()
    if real.extractor_id != gen.extractor_id:
        raise ContractError(f"feature sets from different extractors: "
                            f"{real.extractor_id!r} vs {gen.extractor_id!r}")
    x, y = real.matrix, gen.matrix
    n_min = min(x.shape[0], y.shape[0])
    block = cfg.block_size if cfg.block_size is not None else min(n_min, 100)
    if block > n_min:
        raise ConfigError(f"block_size {block} exceeds smaller set size {n_min}")
    values = []
    for b in range(cfg.num_blocks):
        rng = Rng(derive_seed(seed, "kid-block", b))
        ix = np.sort(rng.permutation(x.shape[0])[:block])
        iy = np.sort(rng.permutation(y.shape[0])[:block])
        values.append(mmd2_unbiased(x[ix], y[iy], cfg.degree, cfg.offset, cfg.scale))
    values = np.asarray(values)
    return float(values.mean()), float(values.std())


# ---------------------------------------------------------------------------
# feature file format


def save_features(features: FeatureSet, path) -> None:
    n, d = features.matrix.shape
    if n > 0xFFFFFFFF or d > 0xFFFFFFFF:
        raise FormatError("feature matrix dimensions overflow the u32 header")
    ident = features.extractor_id.encode("utf-8")
    if len(ident) > 0xFFFF:
        raise FormatError("extractor id longer than 65535 bytes")
    blob = b"".join([
        FEAT_MAGIC,
        struct.pack("<III", FEAT_VERSION, n, d),
        struct.pack("<H", len(ident)),
        ident,
        np.ascontiguousarray(features.matrix, dtype="<f4").tobytes(),
    ])
    with open(path, "wb") as fh:
        fh.write(blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


def load_features(path) -> FeatureSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 12 + 2 + 4:
        raise CorruptionError(f"{path}: too short to be a feature file")
    if blob[:4] != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptionError(f"{path}: CRC mismatch")
    version, n, d = struct.unpack("<III", blob[4:16])
    if version != FEAT_VERSION:
        raise FormatError(f"{path}: unsupported feature file version {version}")
    (id_len,) = struct.unpack("<H", blob[16:18])
    end_id = 18 + id_len
    payload_end = end_id + 4 * n * d
    if payload_end + 4 != len(blob):
        raise CorruptionError(f"{path}: payload size mismatch")
    extractor_id = blob[18:end_id].decode("utf-8")
    data = np.frombuffer(blob[end_id:payload_end], dtype="<f4").astype(np.float64)
    return FeatureSet(data.reshape(n, d), extractor_id)


# ---------------------------------------------------------------------------
# combined report


def _resolve_features(source, extractor: str) -> FeatureSet:
    if isinstance(source, FeatureSet):
        return source
    return extract_features(source, extractor)


def evaluate(real, gen, extractor: str = "pool", kid_cfg: KidConfig | None = None,
             seed: int = 0) -> MetricReport:
    """FID + KID report over two image stacks and/or prebuilt feature sets."""
    rf = _resolve_features(real, extractor)
    gf = _resolve_features(gen, extractor)
    if rf.extractor_id != gf.extractor_id:
        raise ContractError(f"extractor mismatch: {rf.extractor_id!r} vs {gf.extractor_id!r}")
    fid_value = fid(gaussian_stats(rf), gaussian_stats(gf))
    kid_mean, kid_std = kid(rf, gf, kid_cfg, seed)
    return MetricReport(fid=fid_value, kid_mean=kid_mean, kid_std=kid_std,
                        n_real=rf.matrix.shape[0], n_gen=gf.matrix.shape[0],
                        extractor_id=rf.extractor_id)
