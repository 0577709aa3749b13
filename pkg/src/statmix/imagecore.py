"""Images, datasets and the CIFAR binary record format.

Pixels live in the real interval [0, 1] (8-bit value / 255) and are stored as
float64 arrays indexed ``[w, h, c]``. CIFAR records store each channel as a
row-major plane, so byte ``c*H*W + h*W + w`` holds pixel ``[w, h, c]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
CIFAR_PIXEL_BYTES = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS  # 3072

CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)
CIFAR100_TRAIN_FILES = ("train.bin",)
CIFAR100_TEST_FILES = ("test.bin",)


class IngestionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Image:
    """A W x H x C pixel tensor with a class label.

    ``coarse_label`` is only carried so CIFAR-100 files survive a
    load/save round trip; nothing downstream reads it.
    """

    pixels: np.ndarray
    label: int
    coarse_label: int | None = None

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 3:
            raise ValueError(f"pixels must be indexed [w,h,c], got shape {px.shape}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label", int(self.label))
        if self.label < 0:
            raise ValueError(f"negative label {self.label}")

    @property
    def width(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def with_pixels(self, pixels: np.ndarray) -> "Image":
        return Image(pixels, self.label, self.coarse_label)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (
            self.label == other.label
            and self.coarse_label == other.coarse_label
            and self.pixels.shape == other.pixels.shape
            and bool(np.array_equal(self.pixels, other.pixels))
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    images: tuple[Image, ...]
    num_classes: int
    name: str = ""
    _stack: np.ndarray = field(init=False, repr=False, compare=False)
    _labels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        images = tuple(self.images)
        object.__setattr__(self, "images", images)
        shapes = {img.pixels.shape for img in images}
        if len(shapes) > 1:
            raise ValueError(f"images have mixed shapes: {sorted(shapes)}")
        for i, img in enumerate(images):
            if img.label >= self.num_classes:
                raise ValueError(
                    f"image {i} has label {img.label} >= num_classes {self.num_classes}"
                )
        if images:
            stack = np.stack([img.pixels for img in images])
        else:
            stack = np.zeros((0, 0, 0, 0))
        stack.setflags(write=False)
        labels = np.array([img.label for img in images], dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "_stack", stack)
        object.__setattr__(self, "_labels", labels)

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> Image:
        return self.images[i]

    @property
    def pixels(self) -> np.ndarray:
        """Read-only stack of all pixel arrays, shape (n, W, H, C)."""
        return self._stack

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self._stack.shape[1:])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self._labels, minlength=self.num_classes)

    def subset(self, indices, name: str | None = None) -> "Dataset":
        return Dataset(
            tuple(self.images[int(i)] for i in indices),
            self.num_classes,
            self.name if name is None else name,
        )


def _label_bytes(num_classes: int) -> int:
    return 1 if num_classes <= 10 else 2


def load_cifar_binary(path, num_classes: int, name: str | None = None) -> Dataset:
    """Read a CIFAR-10 (1 label byte) or CIFAR-100 (coarse + fine) binary file."""
    path = Path(path)
    raw = np.fromfile(path, dtype=np.uint8)
    nlab = _label_bytes(num_classes)
    record = nlab + CIFAR_PIXEL_BYTES
    if raw.size % record:
        whole = raw.size // record
        raise IngestionError(
            f"{path}: truncated record at byte offset {whole * record} "
            f"(file length {raw.size} is not a multiple of {record})"
        )
    records = raw.reshape(-1, record)
    fine = records[:, nlab - 1]
    bad = np.flatnonzero(fine >= num_classes)
    if bad.size:
        raise IngestionError(
            f"{path}: record {int(bad[0])} has label {int(fine[bad[0]])} "
            f">= num_classes {num_classes}"
        )
    planes = records[:, nlab:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)
    # (n, c, h, w) -> (n, w, h, c)
    pixels = planes.transpose(0, 3, 2, 1).astype(np.float64) / 255.0
    coarse = records[:, 0] if nlab == 2 else None
    images = tuple(
        Image(pixels[i], int(fine[i]), None if coarse is None else int(coarse[i]))
        for i in range(records.shape[0])
    )
    return Dataset(images, num_classes, name or path.name)


def load_cifar_dir(directory, num_classes: int = 10, train: bool = True) -> Dataset:
    """Concatenate the standard batch files of an extracted CIFAR binary archive."""
    directory = Path(directory)
    if num_classes <= 10:
        files = CIFAR10_TRAIN_FILES if train else CIFAR10_TEST_FILES
    else:
        files = CIFAR100_TRAIN_FILES if train else CIFAR100_TEST_FILES
    missing = [f for f in files if not (directory / f).exists()]
    if missing:
        raise IngestionError(f"{directory}: missing {', '.join(missing)}")
    parts = [load_cifar_binary(directory / f, num_classes) for f in files]
    images = tuple(img for part in parts for img in part.images)
    return Dataset(images, num_classes, f"{directory.name}/{'train' if train else 'test'}")


def default_data_dir() -> Path | None:
    env = os.environ.get("STATMIX_DATA_DIR")
    return Path(env) if env else None


def to_bytes_u8(img: Image) -> bytes:
    """Channel-planar 8-bit bytes of ``img``; the only place pixels get clamped."""
    q = np.rint(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    return q.transpose(2, 1, 0).tobytes()


def encode_cifar_records(ds: Dataset) -> bytes:
    nlab = _label_bytes(ds.num_classes)
    out = bytearray()
    for img in ds.images:
        if img.pixels.shape != (CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS):
            raise ValueError(f"CIFAR records need 32x32x3 images, got {img.pixels.shape}")
        if nlab == 2:
            out.append(img.coarse_label if img.coarse_label is not None else 0)
        out.append(img.label)
        out += to_bytes_u8(img)
    return bytes(out)


def save_cifar_binary(ds: Dataset, path) -> None:
    Path(path).write_bytes(encode_cifar_records(ds))


def write_ppm(img: Image, path) -> None:
    """Plain-text P3 pixmap, one pixel row per line."""
    q = np.rint(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    lines = [f"P3\n{img.width} {img.height}\n255"]
    for h in range(img.height):
        row = q[:, h, :3] if img.channels >= 3 else np.repeat(q[:, h, :1], 3, axis=1)
        lines.append(" ".join(str(v) for v in row.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def synthetic_dataset(
    per_class: int,
    num_classes: int = 10,
    seed: int = 0,
    side: int = CIFAR_SIDE,
    name: str = "synthetic",
) -> Dataset:
    """8-bit-quantized class-dependent images for tests and demos.

    Each class gets its own mean colour and a horizontal gradient direction;
    per-image brightness and noise vary, so channel statistics differ from
    image to image the way they do in natural photos.
    """
    rng = np.random.default_rng(seed)
    palette = np.random.default_rng(10_000 + num_classes).uniform(0.2, 0.8, (num_classes, 3))
    ramp = np.linspace(-1.0, 1.0, side)
    images = []
    for label in range(num_classes):
        sign = 1.0 if label % 2 == 0 else -1.0
        for _ in range(per_class):
            gain = rng.uniform(0.6, 1.4)
            offset = rng.uniform(-0.1, 0.1, 3)
            base = palette[label] * gain + offset
            grad = sign * 0.15 * ramp[:, None, None] * np.ones((side, side, 3))
            noise = rng.normal(0.0, 0.08, (side, side, 3))
            px = np.clip(base + grad + noise, 0.0, 1.0)
            px = np.rint(px * 255.0) / 255.0
            images.append(Image(px, label))
    order = rng.permutation(len(images))
    return Dataset(tuple(images[i] for i in order), num_classes, name)
