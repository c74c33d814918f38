import numpy as np
import pytest
from PIL import Image

from artgan.rng import Rng


def shape_image(rng: Rng, size: int = 32) -> np.ndarray:
    """One procedurally colored shape image, [3,size,size] in [-1,1]."""
    img = np.empty((3, size, size))
    bg = rng.random(3) * 2 - 1
    img[:] = bg[:, None, None]
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.random(()) * 2) + 1):
        color = rng.random(3) * 2 - 1
        kind = int(rng.random(()) * 3)
        cx, cy = rng.random(2) * (size - 8) + 4
        r = rng.random(()) * (size / 4) + 3
        if kind == 0:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
        elif kind == 1:
            mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r)
        else:
            mask = (np.abs(xx - cx) + np.abs(yy - cy)) < r
        img[:, mask] = color[:, None]
    return img


def make_shape_corpus(n: int, seed: int, size: int = 32) -> np.ndarray:
    rng = Rng(seed)
    return np.stack([shape_image(rng, size) for _ in range(n)])


def write_shape_corpus(directory, n: int, seed: int, size: int = 32) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    corpus = make_shape_corpus(n, seed, size)
    quantized = np.rint((np.clip(corpus, -1, 1) + 1) * 127.5).astype(np.uint8)
    for i, img in enumerate(quantized):
        Image.fromarray(img.transpose(1, 2, 0), mode="RGB").save(
            directory / f"shape-{i:04d}.png")


def write_png(path, array_hwc: np.ndarray, mode: str = "RGB") -> None:
    Image.fromarray(array_hwc, mode=mode).save(path)


class ArrayBatcher:
    """Batcher over an in-memory image stack, same index scheme as dataset."""

    def __init__(self, images: np.ndarray, batch_size: int, seed: int):
        self.images = images
        self.batch_size = batch_size
        self.seed = seed

    def __call__(self, step: int) -> np.ndarray:
        from artgan.dataset import batch_indices
        idx = batch_indices(len(self.images), self.batch_size, step, self.seed)
        return self.images[idx]


@pytest.fixture
def tiny_train_config():
    from artgan.trainer import TrainConfig
    return TrainConfig(resolution=8, batch_size=4, total_iterations=10,
                       checkpoint_interval=5, fid_monitor_interval=5,
                       fid_monitor_samples=4, dim_z=8, dim_w=8,
                       mapping_layers=2, channel_base=8, channel_max=8, seed=3)
