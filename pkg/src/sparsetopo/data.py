"""Fashion-MNIST and CIFAR-10 loading, caching, standardization and augmentation.

Cache layout (``$SPARSETOPO_CACHE``, default ``~/.cache/sparsetopo``)::

    fashion_mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte.gz
    fashion_mnist/checksums.json
    cifar10/cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin
    cifar10/checksums.json

``checksums.json`` maps file names to sha256 digests.  When it is absent,
files are checked against the published md5 of the official archives.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import os
import shutil
import struct
import tarfile
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .topology import make_rng

log = logging.getLogger(__name__)

CACHE_ENV = "SPARSETOPO_CACHE"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

FASHION_URL = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"
FASHION_FILES = {
    "train_images": ("train-images-idx3-ubyte.gz", "8d4fb7e6c68d591d4c3dfef9ec88bf0d"),
    "train_labels": ("train-labels-idx1-ubyte.gz", "25c81989df183df01b3e8a0aad5dffbe"),
    "test_images": ("t10k-images-idx3-ubyte.gz", "bef4ecab320f06d8554ea6380940ec79"),
    "test_labels": ("t10k-labels-idx1-ubyte.gz", "bb300cfdad3c16e7a12a480ee83cd310"),
}
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
CIFAR_MD5 = "c32a1d4ab5d03f1284b67883e8d87530"
CIFAR_TRAIN_BATCHES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_BATCH = "test_batch.bin"
CIFAR_RECORD = 1 + 3072
CIFAR_BATCH_RECORDS = 10000


class DataError(RuntimeError):
    pass


class ParseError(DataError):
    pass


class ChecksumError(DataError):
    pass


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    name: str = ""
    num_classes: int = 10
    image_shape: tuple[int, ...] | None = None
    info: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return int(self.x_train.shape[1])

    def subset(self, n_train: int | None = None, n_val: int | None = None, n_test: int | None = None) -> Dataset:
        """Leading slices of each partition (partitions are already shuffled)."""
        return Dataset(
            self.x_train[:n_train],
            self.y_train[:n_train],
            self.x_val[:n_val],
            self.y_val[:n_val],
            self.x_test[:n_test],
            self.y_test[:n_test],
            self.name,
            self.num_classes,
            self.image_shape,
            dict(self.info, subset=[n_train, n_val, n_test]),
        )


def cache_root(cache_dir: str | os.PathLike | None = None) -> Path:
    if cache_dir is not None:
        return Path(cache_dir)
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "sparsetopo"))


def _digest(path: Path, algo: str) -> str:
    h = hashlib.new(algo)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory: Path, names) -> None:
    manifest = {name: _digest(directory / name, "sha256") for name in sorted(names)}
    (directory / "checksums.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def verify(directory: Path, name: str, official_md5: str | None = None) -> None:
    path = directory / name
    manifest_path = directory / "checksums.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if name not in manifest:
            raise ChecksumError(f"{name} is not listed in {manifest_path}")
        if _digest(path, "sha256") != manifest[name]:
            raise ChecksumError(f"sha256 mismatch for {path}")
    elif official_md5 is not None:
        if _digest(path, "md5") != official_md5:
            raise ChecksumError(f"md5 mismatch for {path}")


def _download(url: str, dest: Path) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_suffix(dest.suffix + ".part")
    log.info("downloading %s", url)
    with urllib.request.urlopen(url, timeout=60) as resp, open(tmp, "wb") as fh:
        shutil.copyfileobj(resp, fh)
    os.replace(tmp, dest)


def read_idx(path: str | os.PathLike, expected_magic: int) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) into a uint8 array."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            raw = fh.read()
    except (OSError, EOFError) as exc:
        raise ParseError(f"{path}: cannot read ({exc})") from exc
    if len(raw) < 8:
        raise ParseError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ParseError(f"{path}: magic {magic:#010x}, expected {expected_magic:#010x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header != size:
        raise ParseError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path: str | os.PathLike, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    payload = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def split_train_val(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded unstratified split of ``range(n)``."""
    order = make_rng(seed, 7).permutation(n)
    n_val = int(round(val_fraction * n))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _shuffle(x: np.ndarray, y: np.ndarray, seed: int, stream: int) -> tuple[np.ndarray, np.ndarray]:
    order = make_rng(seed, 8, stream).permutation(len(x))
    return x[order], y[order]


def standardize_features(train: np.ndarray, *others: np.ndarray):
    """Per-feature standardization with statistics of ``train``; constant features keep std 1."""
    mean = train.mean(axis=0, dtype=np.float64)
    std = train.std(axis=0, dtype=np.float64)
    std[std == 0] = 1.0
    return [((a - mean) / std).astype(np.float32) for a in (train, *others)]


def standardize_channels(train: np.ndarray, *others: np.ndarray, channels: int = 3):
    """Per-channel standardization of channel-major flattened images."""
    def per_channel(a):
        return a.reshape(len(a), channels, -1)

    t = per_channel(train)
    mean = t.mean(axis=(0, 2), dtype=np.float64)[None, :, None]
    std = t.std(axis=(0, 2), dtype=np.float64)[None, :, None]
    std[std == 0] = 1.0
    return [((per_channel(a) - mean) / std).astype(np.float32).reshape(len(a), -1) for a in (train, *others)]


def _finish(x_tr, y_tr, x_te, y_te, *, name, seed, val_fraction, standardize, image_shape) -> Dataset:
    x_tr = x_tr.reshape(len(x_tr), -1).astype(np.float32) / np.float32(255)
    x_te = x_te.reshape(len(x_te), -1).astype(np.float32) / np.float32(255)
    tr_idx, va_idx = split_train_val(len(x_tr), val_fraction, seed)
    x_tr, x_va = x_tr[tr_idx], x_tr[va_idx]
    y_tr, y_va = y_tr[tr_idx].astype(np.int64), y_tr[va_idx].astype(np.int64)
    x_tr, y_tr = _shuffle(x_tr, y_tr, seed, 0)
    x_va, y_va = _shuffle(x_va, y_va, seed, 1)
    y_te = y_te.astype(np.int64)
    if standardize == "feature":
        x_tr, x_va, x_te = standardize_features(x_tr, x_va, x_te)
    elif standardize == "channel":
        x_tr, x_va, x_te = standardize_channels(x_tr, x_va, x_te)
    elif standardize in (None, "none"):
        x_tr, x_va, x_te = (a.astype(np.float32) for a in (x_tr, x_va, x_te))
    else:
        raise ValueError(f"unknown standardization {standardize!r}")
    for y in (y_tr, y_va, y_te):
        if y.size and (y.min() < 0 or y.max() > 9):
            raise ParseError(f"{name}: label outside [0, 9]")
    info = {"dataset": name, "split_seed": seed, "val_fraction": val_fraction, "normalization": standardize or "none"}
    return Dataset(x_tr, y_tr, x_va, y_va, x_te, y_te, name, 10, image_shape, info)


def load_fashion_mnist(
    cache_dir: str | os.PathLike | None = None,
    *,
    seed: int = 0,
    val_fraction: float = 0.2,
    standardize: str | None = "feature",
    offline: bool = False,
) -> Dataset:
    """60000 training images (split 48000/12000 by ``seed``) and 10000 test images,
    scaled to [0, 1] then standardized per feature with training statistics."""
    directory = cache_root(cache_dir) / "fashion_mnist"
    arrays = {}
    for key, (name, md5) in FASHION_FILES.items():
        path = directory / name
        if not path.exists():
            if offline:
                raise DataError(f"{path} missing and offline mode is on")
            _download(FASHION_URL + name, path)
        verify(directory, name, md5)
        magic = IDX_IMAGES_MAGIC if key.endswith("images") else IDX_LABELS_MAGIC
        arrays[key] = read_idx(path, magic)
    for split in ("train", "test"):
        images, labels = arrays[f"{split}_images"], arrays[f"{split}_labels"]
        if images.shape[1:] != (28, 28) or len(images) != len(labels):
            raise ParseError(f"fashion-mnist {split}: images {images.shape} vs labels {labels.shape}")
    return _finish(
        arrays["train_images"],
        arrays["train_labels"],
        arrays["test_images"],
        arrays["test_labels"],
        name="fashion_mnist",
        seed=seed,
        val_fraction=val_fraction,
        standardize=standardize,
        image_shape=(1, 28, 28),
    )


def read_cifar_batch(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """CIFAR-10 binary batch: records of 1 label byte + 3072 channel-major pixel bytes."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise ParseError(f"{path}: {len(raw)} bytes is not a whole number of {CIFAR_RECORD}-byte records")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0]
    if labels.max() > 9:
        raise ParseError(f"{path}: label outside [0, 9]")
    return records[:, 1:], labels


def load_cifar10(
    cache_dir: str | os.PathLike | None = None,
    *,
    seed: int = 0,
    val_fraction: float = 0.2,
    standardize: str | None = "channel",
    offline: bool = False,
) -> Dataset:
    """50000 training images (split 40000/10000) and 10000 test images."""
    directory = cache_root(cache_dir) / "cifar10"
    batch_dir = directory / "cifar-10-batches-bin"
    names = CIFAR_TRAIN_BATCHES + [CIFAR_TEST_BATCH]
    if not all((batch_dir / n).exists() for n in names):
        archive = directory / "cifar-10-binary.tar.gz"
        if not archive.exists():
            if offline:
                raise DataError(f"{batch_dir} incomplete and offline mode is on")
            _download(CIFAR_URL, archive)
        verify(directory, archive.name, CIFAR_MD5)
        with tarfile.open(archive) as tar:
            tar.extractall(directory, filter="data")
    else:
        manifest = batch_dir / "checksums.json"
        if manifest.exists():
            for n in names:
                verify(batch_dir, n)
    xs, ys = [], []
    for n in CIFAR_TRAIN_BATCHES:
        x, y = read_cifar_batch(batch_dir / n)
        if len(x) != CIFAR_BATCH_RECORDS:
            raise ParseError(f"{n}: {len(x)} records, expected {CIFAR_BATCH_RECORDS}")
        xs.append(x)
        ys.append(y)
    x_te, y_te = read_cifar_batch(batch_dir / CIFAR_TEST_BATCH)
    return _finish(
        np.concatenate(xs),
        np.concatenate(ys),
        x_te,
        y_te,
        name="cifar10",
        seed=seed,
        val_fraction=val_fraction,
        standardize=standardize,
        image_shape=(3, 32, 32),
    )


def load_dataset(name: str, cache_dir=None, **kwargs) -> Dataset:
    loaders = {"fashion_mnist": load_fashion_mnist, "fashion-mnist": load_fashion_mnist, "cifar10": load_cifar10}
    try:
        loader = loaders[name.lower()]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}") from None
    return loader(cache_dir, **kwargs)


def _as_images(batch: np.ndarray, shape=(3, 32, 32)) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim == 2 and batch.shape[1] == int(np.prod(shape)):
        return batch.reshape(len(batch), *shape)
    if batch.ndim == 4 and batch.shape[1:] == shape:
        return batch
    raise ValueError(f"expected a batch of {shape} images, got shape {batch.shape}")


def hflip(batch: np.ndarray) -> np.ndarray:
    images = _as_images(batch)
    return images[..., ::-1].reshape(batch.shape)


def reflect_crop(batch: np.ndarray, offsets: np.ndarray, pad: int = 4) -> np.ndarray:
    """Reflect-pad each image by ``pad`` pixels and crop back at ``offsets[i] = (dy, dx)``.

    ``(pad, pad)`` returns the image unchanged.
    """
    images = _as_images(batch)
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    offsets = np.asarray(offsets, dtype=np.int64).reshape(n, 2)
    if offsets.min() < 0 or offsets.max() > 2 * pad:
        raise ValueError(f"crop offsets must lie in [0, {2 * pad}]")
    rows = offsets[:, 0, None] + np.arange(h)
    cols = offsets[:, 1, None] + np.arange(w)
    out = padded[np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None], rows[:, None, :, None], cols[:, None, None, :]]
    return out.reshape(batch.shape)


def augment(batch: np.ndarray, seed: int, pad: int = 4) -> np.ndarray:
    """Random horizontal flip (p=0.5) then random reflect-padded crop, per sample."""
    images = _as_images(batch)
    rng = make_rng(seed, 9)
    n = len(images)
    flip = rng.random(n) < 0.5
    out = images.copy()
    out[flip] = out[flip][..., ::-1]
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    return reflect_crop(out.reshape(batch.shape), offsets, pad)
