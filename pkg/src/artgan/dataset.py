"""Image corpus ingestion: scan, RGB filtering, square resize, batching.

The resize is a direct resample to ``target x target`` (aspect ratio is not
preserved): area averaging when an axis shrinks, bilinear when it grows.
Batches are served without replacement within an epoch and every random
choice is a pure function of (seed, step), so any batch can be recomputed
after a resume without extra bookkeeping.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, EmptyDatasetError, FormatError
from .rng import Rng, derive_seed

logger = logging.getLogger("artgan.dataset")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass
class ImageRecord:
    path: str
    width: int
    height: int
    channels: int
    format: str  # "png" or "jpeg"


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    target_resolution: int
    counts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "target_resolution": self.target_resolution,
                "counts": self.counts,
                "records": [vars(r) for r in self.records],
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            doc = json.loads(text)
            records = [ImageRecord(**r) for r in doc["records"]]
            return cls(records=records, target_resolution=int(doc["target_resolution"]),
                       counts=dict(doc["counts"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad manifest document: {exc}") from None


def worker_count() -> int:
    env = os.environ.get("ARTGAN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ARTGAN_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _probe(path: Path):
    try:
        with Image.open(path) as img:
            fmt = (img.format or "").lower()
            if fmt not in ("png", "jpeg"):
                return None
            return ImageRecord(path=str(path), width=img.size[0], height=img.size[1],
                               channels=len(img.getbands()), format=fmt)
    except OSError:
        return None


def scan_directory(data_dir, target_resolution: int = 64) -> DatasetManifest:
    """Build a manifest of decodable png/jpeg files under ``data_dir``.

    Unreadable image files are counted, not fatal; non-image files are
    skipped with a warning.  Raises if the directory is missing or holds no
    decodable image at all.
    """
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {data_dir}")
    candidates = []
    for p in sorted(root.rglob("*")):
        if p.is_dir():
            continue
        if p.suffix.lower() in IMAGE_SUFFIXES:
            candidates.append(p)
        else:
            logger.warning("ignoring non-image file %s", p)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        probed = list(pool.map(_probe, candidates))
    records = sorted((r for r in probed if r is not None), key=lambda r: r.path)
    unreadable = sum(1 for r in probed if r is None)
    if unreadable:
        logger.warning("%d unreadable image file(s) skipped", unreadable)
    if not records:
        raise EmptyDatasetError(f"no decodable images in {data_dir}")
    counts = {
        "scanned": len(candidates),
        "kept": len(records),
        "dropped_non_rgb": 0,
        "dropped_unreadable": unreadable,
    }
    return DatasetManifest(records=records, target_resolution=target_resolution,
                           counts=counts)


def filter_rgb(manifest: DatasetManifest) -> DatasetManifest:
    """Keep only 3-channel records; grayscale/RGBA/palette images are dropped."""
    kept = [r for r in manifest.records if r.channels == 3]
    dropped = len(manifest.records) - len(kept)
    counts = dict(manifest.counts)
    counts["kept"] = len(kept)
    counts["dropped_non_rgb"] = counts.get("dropped_non_rgb", 0) + dropped
    return DatasetManifest(records=kept, target_resolution=manifest.target_resolution,
                           counts=counts)


# ---------------------------------------------------------------------------
# resampling

_weight_cache: dict[tuple[int, int], np.ndarray] = {}


def _resample_matrix(src: int, dst: int) -> np.ndarray:
    """Row-stochastic [dst, src] matrix: box average shrinking, bilinear growing."""
    key = (src, dst)
    cached = _weight_cache.get(key)
    if cached is not None:
        return cached
    w = np.zeros((dst, src), dtype=np.float64)
    if dst == src:
        np.fill_diagonal(w, 1.0)
    elif dst < src:
        ratio = src / dst
        for i in range(dst):
            lo, hi = i * ratio, (i + 1) * ratio
            j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
            for j in range(j0, min(j1, src)):
                overlap = min(hi, j + 1) - max(lo, j)
                if overlap > 0:
                    w[i, j] = overlap / ratio
    else:
        for i in range(dst):
            s = (i + 0.5) * src / dst - 0.5
            j0 = int(np.floor(s))
            frac = s - j0
            ja, jb = min(max(j0, 0), src - 1), min(max(j0 + 1, 0), src - 1)
            w[i, ja] += 1.0 - frac
            w[i, jb] += frac
    _weight_cache[key] = w
    return w


def _resize_chw(pixels: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    c, h, w = pixels.shape
    wh = _resample_matrix(h, target_h)
    ww = _resample_matrix(w, target_w)
    out = np.matmul(wh[None, :, :], pixels)          # [C, th, W]
    out = np.matmul(out, ww.T[None, :, :])           # [C, th, tw]
    return np.ascontiguousarray(out)


def resize_image(pixels: np.ndarray, target: int) -> np.ndarray:
    """Resample a [3,H,W] image to [3,target,target] (no aspect preservation)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3:
        raise ConfigError(f"expected [C,H,W] pixel array, got shape {pixels.shape}")
    if target < 16 or target > 1024 or target & (target - 1):
        raise ConfigError(f"target resolution must be a power of two in [16, 1024], got {target}")
    return _resize_chw(pixels, target, target)


def load_image(path, resolution: int) -> np.ndarray:
    """Decode an RGB image file to [3,R,R] float64 scaled into [-1, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"{path}: expected an RGB image, got shape {arr.shape}")
    chw = np.ascontiguousarray(arr.transpose(2, 0, 1))
    chw = _resize_chw(chw, resolution, resolution)
    return chw / 127.5 - 1.0


# ---------------------------------------------------------------------------
# batching


def epoch_permutation(n: int, epoch: int, seed: int) -> np.ndarray:
    return Rng(derive_seed(seed, "epoch", epoch)).permutation(n)


def batch_indices(n: int, batch_size: int, step: int, seed: int) -> list[int]:
    """Sample positions for step ``step``: without replacement within an epoch."""
    out = []
    perm = None
    epoch_of_perm = -1
    for pos in range(step * batch_size, (step + 1) * batch_size):
        epoch, within = divmod(pos, n)
        if epoch != epoch_of_perm:
            perm = epoch_permutation(n, epoch, seed)
            epoch_of_perm = epoch
        out.append(int(perm[within]))
    return out


class Batcher:
    """Serves normalized training batches; decoded images are cached."""

    def __init__(self, manifest: DatasetManifest, batch_size: int, seed: int,
                 augment_flip: bool = False):
        if not manifest.records:
            raise EmptyDatasetError("cannot batch from an empty manifest")
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.manifest = manifest
        self.batch_size = batch_size
        self.seed = seed
        self.augment_flip = augment_flip
        self._cache: dict[int, np.ndarray] = {}

    def _pixels(self, idx: int) -> np.ndarray:
        arr = self._cache.get(idx)
        if arr is None:
            arr = load_image(self.manifest.records[idx].path,
                             self.manifest.target_resolution)
            self._cache[idx] = arr
        return arr

    def __call__(self, step: int) -> np.ndarray:
        n = len(self.manifest.records)
        idxs = batch_indices(n, self.batch_size, step, self.seed)
        batch = np.stack([self._pixels(i) for i in idxs])
        if self.augment_flip:
            flips = Rng(derive_seed(self.seed, "flip", step)).random(self.batch_size) < 0.5
            if flips.any():
                batch = batch.copy()
                batch[flips] = batch[flips][:, :, :, ::-1]
        return batch


def training_batch(manifest: DatasetManifest, batch_size: int, seed: int,
                   step: int = 0, augment_flip: bool = False) -> np.ndarray:
    """One [batch,3,R,R] training batch in [-1,1], deterministic per (seed, step)."""
    return Batcher(manifest, batch_size, seed, augment_flip)(step)
