"""MNIST ingestion: IDX container parsing, normalization, sequence tasks.

Images become scalar time series by flattening row-major, one pixel per step,
normalized to [-1, 1].  The permuted variant reorders every sequence by one
fixed seed-generated permutation.  Splits are positional: the first 50k of the
training file train, the last 10k validate, the official test file tests.

A deterministic synthetic digit generator is included so the pipeline can be
exercised end to end on machines without the real archives; it writes ordinary
IDX files through the same writer the parser round-trips against.
"""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DataError",
    "parse_idx_images",
    "parse_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "normalize",
    "SequenceDataset",
    "make_task",
    "load_mnist_dir",
    "fetch_mnist",
    "minibatch_indices",
    "generate_demo_digits",
    "write_demo_dataset",
    "MNIST_FILES",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# filename -> md5 of the gzip archive, as published with the dataset
MNIST_FILES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]


class DataError(ValueError):
    """Malformed, missing, or unverifiable dataset input."""


def _maybe_decompress(raw: bytes) -> bytes:
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def parse_idx_images(raw: bytes) -> np.ndarray:
    """Decode an IDX image container into a (count, rows, cols) uint8 array."""
    raw = _maybe_decompress(raw)
    if len(raw) < 16:
        raise DataError(f"image header truncated at byte {len(raw)} (need 16)")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise DataError(f"bad image magic 0x{magic:08x} at byte 0 (expected 0x{IMAGE_MAGIC:08x})")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DataError(
            f"image payload ends at byte {len(raw)}, header promises {expected} "
            f"({count} x {rows} x {cols})"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def parse_idx_labels(raw: bytes) -> np.ndarray:
    """Decode an IDX label container into a (count,) uint8 array of digits."""
    raw = _maybe_decompress(raw)
    if len(raw) < 8:
        raise DataError(f"label header truncated at byte {len(raw)} (need 8)")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise DataError(f"bad label magic 0x{magic:08x} at byte 0 (expected 0x{LABEL_MAGIC:08x})")
    if len(raw) != 8 + count:
        raise DataError(f"label payload ends at byte {len(raw)}, header promises {8 + count}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataError(f"label {labels[bad[0]]} out of range at byte {8 + int(bad[0])}")
    return labels


def write_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    return struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols) + images.tobytes()


def write_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes()


def normalize(pixels) -> np.ndarray:
    """Map byte intensities 0..255 linearly onto [-1, 1]."""
    return 2.0 * np.asarray(pixels, dtype=float) / 255.0 - 1.0


def _downsample(images: np.ndarray, size: int) -> np.ndarray:
    """Mean-pool square images down to size x size (factor must divide)."""
    side = images.shape[1]
    if side % size:
        raise DataError(f"cannot pool {side}x{side} images to {size}x{size}")
    f = side // size
    return images.reshape(len(images), size, f, size, f).mean(axis=(2, 4))


@dataclass
class SequenceDataset:
    """Normalized scalar sequences with positional train/val/test splits."""

    task: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    permutation: np.ndarray | None = None
    perm_seed: int | None = None
    classes: tuple[int, ...] = tuple(range(10))

    @property
    def seq_len(self) -> int:
        return self.X_train.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, f"X_{name}"), getattr(self, f"y_{name}")


def _select(images, labels, classes, count):
    if classes is not None:
        keep = np.isin(labels, classes)
        images, labels = images[keep], labels[keep].copy()
        remap = {c: i for i, c in enumerate(classes)}
        labels = np.array([remap[int(l)] for l in labels], dtype=np.int64)
    else:
        labels = labels.astype(np.int64)
    if count is not None:
        if count > len(labels):
            raise DataError(f"asked for {count} sequences, only {len(labels)} available")
        images, labels = images[:count], labels[:count]
    return images, labels


def make_task(
    train_images: np.ndarray,
    train_labels: np.ndarray,
    test_images: np.ndarray,
    test_labels: np.ndarray,
    task: str = "smnist",
    perm_seed: int | None = None,
    classes: tuple[int, ...] | None = None,
    image_size: int | None = None,
    counts: tuple[int | None, int | None, int | None] = (None, None, None),
    val_fraction: float = 1 / 6,
) -> SequenceDataset:
    """Assemble a sequential classification task from parsed MNIST arrays.

    ``counts`` optionally truncates (train, val, test) after class selection;
    ``image_size`` mean-pools the images first (e.g. 14 for desk-scale runs).
    """
    if task not in ("smnist", "psmnist"):
        raise DataError(f"unknown task {task!r}; expected smnist or psmnist")

    n_val = int(round(len(train_labels) * val_fraction))
    tr_img, tr_lab = train_images[: len(train_images) - n_val], train_labels[: len(train_labels) - n_val]
    va_img, va_lab = train_images[len(train_images) - n_val :], train_labels[len(train_labels) - n_val :]

    parts = []
    for (img, lab), count in zip(
        ((tr_img, tr_lab), (va_img, va_lab), (test_images, test_labels)), counts
    ):
        img, lab = _select(img, lab, classes, count)
        if image_size is not None and image_size != img.shape[1]:
            img = _downsample(img, image_size)
        X = normalize(img).reshape(len(img), -1).astype(np.float32)
        parts.append((X, lab))

    permutation = None
    if task == "psmnist":
        seq_len = parts[0][0].shape[1]
        rng = np.random.default_rng(0 if perm_seed is None else perm_seed)
        permutation = rng.permutation(seq_len)
        parts = [(X[:, permutation], lab) for X, lab in parts]

    (X_tr, y_tr), (X_va, y_va), (X_te, y_te) = parts
    return SequenceDataset(
        task=task,
        X_train=X_tr, y_train=y_tr,
        X_val=X_va, y_val=y_va,
        X_test=X_te, y_test=y_te,
        permutation=permutation,
        perm_seed=perm_seed,
        classes=tuple(classes) if classes is not None else tuple(range(10)),
    )


def load_mnist_dir(data_dir: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Read the four standard archives (gzipped or raw) from a directory."""
    arrays = []
    for name, parser in (
        ("train-images-idx3-ubyte", parse_idx_images),
        ("train-labels-idx1-ubyte", parse_idx_labels),
        ("t10k-images-idx3-ubyte", parse_idx_images),
        ("t10k-labels-idx1-ubyte", parse_idx_labels),
    ):
        path = os.path.join(data_dir, name + ".gz")
        if not os.path.exists(path):
            path = os.path.join(data_dir, name)
        if not os.path.exists(path):
            raise DataError(
                f"missing dataset file {name}[.gz] in {data_dir}; run `hslmu fetch-data` "
                f"(needs network) or `hslmu make-demo-data` for a synthetic stand-in"
            )
        with open(path, "rb") as fh:
            arrays.append(parser(fh.read()))
    return tuple(arrays)


def fetch_mnist(
    out_dir: str,
    mirrors: list[str] | None = None,
    files: dict[str, str] | None = None,
) -> None:
    """Download and digest-verify the archives; nothing lands on disk unverified."""
    os.makedirs(out_dir, exist_ok=True)
    mirrors = MIRRORS if mirrors is None else mirrors
    files = MNIST_FILES if files is None else files
    for name, digest in files.items():
        dest = os.path.join(out_dir, name)
        if os.path.exists(dest) and hashlib.md5(open(dest, "rb").read()).hexdigest() == digest:
            continue
        data = None
        errors = []
        for base in mirrors:
            try:
                with urllib.request.urlopen(base + name, timeout=60) as resp:
                    data = resp.read()
                break
            except (urllib.error.URLError, OSError) as exc:
                errors.append(f"{base}{name}: {exc}")
        if data is None:
            raise DataError(
                "could not download {}; place the archives in {} manually. Tried: {}".format(
                    name, out_dir, "; ".join(errors)
                )
            )
        got = hashlib.md5(data).hexdigest()
        if got != digest:
            raise DataError(f"digest mismatch for {name}: got {got}, expected {digest}")
        with open(dest, "wb") as fh:
            fh.write(data)


def minibatch_indices(n: int, batch_size: int, rng: np.random.Generator):
    """Yield shuffled index blocks covering 0..n-1 exactly once."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


# ---------------------------------------------------------------------------
# Synthetic stand-in digits (offline demo / desk-scale testing)
# ---------------------------------------------------------------------------


def _seg_dist(px, py, x0, y0, x1, y1):
    """Distance from grid points to a line segment."""
    vx, vy = x1 - x0, y1 - y0
    L2 = vx * vx + vy * vy
    t = np.clip(((px - x0) * vx + (py - y0) * vy) / max(L2, 1e-12), 0.0, 1.0)
    return np.hypot(px - (x0 + t * vx), py - (y0 + t * vy))


def _render_digit(cls: int, rng: np.random.Generator, side: int = 28) -> np.ndarray:
    """One stroke-rendered digit from {0, 1, 2} with randomized geometry."""
    ys, xs = np.mgrid[0:side, 0:side]
    px = (xs + 0.5) / side + rng.uniform(-0.06, 0.06)
    py = (ys + 0.5) / side + rng.uniform(-0.06, 0.06)
    width = rng.uniform(0.045, 0.075)
    scale = rng.uniform(0.85, 1.15)

    if cls == 0:
        cx, cy = 0.5, 0.5
        rx = 0.20 * scale * rng.uniform(0.8, 1.1)
        ry = 0.28 * scale * rng.uniform(0.9, 1.1)
        phi = rng.uniform(-0.3, 0.3)
        dx, dy = px - cx, py - cy
        xr = dx * np.cos(phi) + dy * np.sin(phi)
        yr = -dx * np.sin(phi) + dy * np.cos(phi)
        rho = np.sqrt((xr / rx) ** 2 + (yr / ry) ** 2)
        dist = np.abs(rho - 1.0) * min(rx, ry)
    elif cls == 1:
        slant = rng.uniform(-0.10, 0.10)
        x_mid = 0.5 + rng.uniform(-0.05, 0.05)
        top, bot = 0.22 / scale, 1.0 - 0.22 / scale
        dist = _seg_dist(px, py, x_mid + slant, top, x_mid - slant, bot)
        if rng.random() < 0.7:  # serif flag at the top
            dist = np.minimum(
                dist, _seg_dist(px, py, x_mid + slant - 0.12, top + 0.10, x_mid + slant, top)
            )
    elif cls == 2:
        cx, cy, r = 0.5, 0.36, 0.16 * scale
        ang = np.arctan2(py - cy, px - cx)
        on_arc = np.abs(np.hypot(px - cx, py - cy) - r)
        arc = np.where((ang > -2.8) & (ang < 1.2), on_arc, np.inf)
        x_end, y_end = cx + r * np.cos(1.2), cy + r * np.sin(1.2)
        diag = _seg_dist(px, py, x_end, y_end, 0.30 + rng.uniform(-0.04, 0.04), 0.78)
        base = _seg_dist(px, py, 0.30, 0.78, 0.72 + rng.uniform(-0.05, 0.05), 0.78)
        dist = np.minimum(np.minimum(arc, diag), base)
    else:
        raise ValueError(f"no glyph for class {cls}")

    intensity = np.exp(-((dist / width) ** 2)) * rng.uniform(0.8, 1.0)
    intensity += rng.normal(0.0, 0.03, size=intensity.shape)
    return (np.clip(intensity, 0.0, 1.0) * 255).astype(np.uint8)


def generate_demo_digits(
    count: int, seed: int, classes: tuple[int, ...] = (0, 1, 2)
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic balanced synthetic digit set, 28x28 like the real thing."""
    root = np.random.SeedSequence((int(seed), 0xD161))
    labels = np.array([classes[i % len(classes)] for i in range(count)], dtype=np.uint8)
    np.random.default_rng(root).shuffle(labels)
    images = np.empty((count, 28, 28), dtype=np.uint8)
    for i, child in enumerate(root.spawn(count)):
        images[i] = _render_digit(int(labels[i]), np.random.default_rng(child))
    return images, labels


def write_demo_dataset(
    out_dir: str, train_count: int = 2400, test_count: int = 400, seed: int = 0,
    classes: tuple[int, ...] = (0, 1, 2),
) -> None:
    """Write synthetic digits as the four standard IDX files."""
    os.makedirs(out_dir, exist_ok=True)
    tr_img, tr_lab = generate_demo_digits(train_count, seed, classes)
    te_img, te_lab = generate_demo_digits(test_count, seed + 1, classes)
    for name, blob in (
        ("train-images-idx3-ubyte", write_idx_images(tr_img)),
        ("train-labels-idx1-ubyte", write_idx_labels(tr_lab)),
        ("t10k-images-idx3-ubyte", write_idx_images(te_img)),
        ("t10k-labels-idx1-ubyte", write_idx_labels(te_lab)),
    ):
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(blob)
