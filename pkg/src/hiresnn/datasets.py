"""Dataset readers (IDX, CIFAR binary, CSV) and a synthetic two-class task.

All readers return ``(images, labels)`` with images as float64 ``N x H x W x C``
in [0, 1] (pixel / 255) and labels as int64, in file order.
"""
import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InputError

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
CIFAR_RECORD = 1 + 3072


def _read_bytes(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path):
    """Parse an IDX file into an ndarray of its declared type and shape."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError("truncated IDX magic number", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise DataFormatError(f"IDX magic must start with two zero bytes, got {raw[:2].hex()}", offset=0)
    dtype = IDX_TYPES.get(raw[2])
    if dtype is None:
        raise DataFormatError(f"unknown IDX element type 0x{raw[2]:02x}", offset=2)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError("truncated IDX dimension header", offset=len(raw))
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    need = int(np.prod(shape)) * dtype.itemsize
    if len(raw) - header != need:
        raise DataFormatError(f"IDX body has {len(raw) - header} bytes, header declares {need}",
                              offset=header + min(need, len(raw) - header))
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(shape)


def _labels_for(images_path):
    p = Path(images_path)
    name = p.name
    for a, b in (("images-idx3", "labels-idx1"), ("images.idx3", "labels.idx1"), ("images", "labels")):
        if a in name:
            return p.with_name(name.replace(a, b))
    raise InputError(f"cannot infer the labels file for {p}; pass labels_path")


def load_idx(images_path, labels_path=None):
    images = read_idx(images_path)
    labels = read_idx(labels_path or _labels_for(images_path))
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4:
        raise DataFormatError(f"expected a 3- or 4-axis image tensor, got {images.ndim} axes", offset=3)
    if labels.ndim != 1 or len(labels) != len(images):
        raise DataFormatError(f"{len(labels)} labels for {len(images)} images", offset=4)
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def load_cifar_binary(path):
    """CIFAR-10 binary batches: 1 label byte + 3072 channel-major pixel bytes per record."""
    paths = [path] if isinstance(path, (str, Path)) else list(path)
    xs, ys = [], []
    for p in paths:
        raw = _read_bytes(p)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(
                f"{p}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}",
                offset=len(raw) - len(raw) % CIFAR_RECORD)
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    return np.concatenate(xs).astype(np.float64) / 255.0, np.concatenate(ys)


def load_csv(path, shape=None):
    """Rows of ``label, p0, p1, ...`` with 0..255 pixels; square 1-channel by default."""
    raw = _read_bytes(path).decode()
    labels, images = [], []
    offset = 0
    for lineno, line in enumerate(raw.splitlines(keepends=True)):
        text = line.strip()
        if text and not text.lower().startswith("label"):
            try:
                vals = [float(v) for v in text.split(",")]
            except ValueError:
                raise DataFormatError(f"non-numeric field on line {lineno + 1}", offset=offset) from None
            labels.append(int(vals[0]))
            images.append(vals[1:])
        offset += len(line.encode())
    if not images:
        raise DataFormatError("no data rows", offset=0)
    if len({len(r) for r in images}) != 1:
        raise DataFormatError("rows have different lengths", offset=0)
    X = np.array(images, dtype=np.float64)
    if shape is None:
        side = int(round(np.sqrt(X.shape[1])))
        if side * side != X.shape[1]:
            raise DataFormatError(f"{X.shape[1]} pixels per row is not a square image; pass shape",
                                  offset=0)
        shape = (side, side, 1)
    return X.reshape((-1,) + tuple(shape)) / 255.0, np.array(labels, dtype=np.int64)


def ingest_dataset(path, fmt, **kwargs):
    """Load ``path`` as ``fmt`` in {'idx', 'cifar-binary', 'csv'}."""
    loaders = {"idx": load_idx, "cifar-binary": load_cifar_binary, "csv": load_csv}
    if fmt not in loaders:
        raise InputError(f"unknown dataset format {fmt!r}")
    return loaders[fmt](path, **kwargs)


def write_idx(path, array):
    """Write an unsigned-byte IDX file (used to export datasets and adversarial batches)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    header = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def export_idx(prefix, images, labels):
    """Store ``[0, 1]`` images and labels as ``<prefix>-images-idx3-ubyte`` / ``-labels-idx1-ubyte``."""
    images = np.asarray(images)
    if images.ndim == 4 and images.shape[-1] == 1:
        images = images[..., 0]
    img_path = Path(f"{prefix}-images-idx3-ubyte")
    write_idx(img_path, np.clip(np.rint(images * 255.0), 0, 255))
    write_idx(Path(f"{prefix}-labels-idx1-ubyte"), np.asarray(labels, dtype=np.uint8))
    return img_path


def make_bars(n, seed=0, size=28, amplitude=(0.3, 0.6), noise=0.1):
    """Two-class toy images: a horizontal (class 0) or vertical (class 1) bar
    of random position, length and brightness over a noisy flat background.
    """
    rng = np.random.default_rng(seed)
    X = np.zeros((n, size, size, 1))
    Y = rng.integers(0, 2, n)
    X += rng.uniform(0.1, 0.4, (n, 1, 1, 1))
    lo, hi = size * 3 // 14, size * 11 // 14
    for i in range(n):
        a = rng.uniform(*amplitude)
        r = rng.integers(lo, hi)
        length = rng.integers(size * 5 // 14, size * 9 // 14)
        s = rng.integers(2, size - 2 - length)
        if Y[i] == 0:
            X[i, r - 1:r + 2, s:s + length, 0] += a
        else:
            X[i, s:s + length, r - 1:r + 2, 0] += a
    X += rng.normal(0.0, noise, X.shape)
    return np.clip(X, 0.0, 1.0), Y.astype(np.int64)


def make_separable(n, seed=0, dim=16):
    """Linearly separable two-class points in [0, 1]^dim with a margin."""
    rng = np.random.default_rng(seed)
    Y = rng.integers(0, 2, n)
    X = rng.uniform(0.0, 0.4, (n, dim))
    X[:, 0] += 0.6 * Y
    return X, Y.astype(np.int64)
