"""
Dataset ingestion, per-node partitioning and untrusted-device behaviour.

IDX files are parsed exactly as distributed (big-endian header, unsigned
byte payload). Gzip-compressed files are detected by their magic bytes and
decompressed transparently.
"""
from __future__ import annotations

import enum
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, InsufficientDataError, InvalidParameterError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10

BUNDLED_DIR = Path(__file__).parent / "_data"


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (n, rows, cols) uint8
    labels: np.ndarray  # (n,) integer class ids

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise InvalidParameterError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise InvalidParameterError("labels must lie in [0, 10)")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[indices], self.labels[indices])

    def inputs(self) -> np.ndarray:
        """Images as float64 in [0, 1]."""
        return self.images.astype(np.float64) / 255.0


@dataclass(frozen=True)
class PartitionSpec:
    min_samples: int = 100
    max_samples: int = 200
    overlap_allowed: bool = True

    def validate(self, dataset_size: int) -> None:
        if not 1 <= self.min_samples <= self.max_samples <= dataset_size:
            raise InvalidParameterError(
                f"need 1 <= min_samples ({self.min_samples}) <= max_samples "
                f"({self.max_samples}) <= dataset size ({dataset_size})"
            )


class AttackKind(enum.Enum):
    LABEL_FLIP = "label_flip"
    SIGN_FLIP_GRADIENT = "sign_flip_gradient"
    SCALED_NOISE = "scaled_noise"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind = AttackKind.LABEL_FLIP
    magnitude: float = 1.0

    def __post_init__(self):
        if self.magnitude < 0:
            raise InvalidParameterError("attack magnitude must be >= 0")


# -- IDX ---------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _parse_idx(raw: bytes, expected_magic: int, ndim: int, what: str) -> np.ndarray:
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{what}: truncated header ({len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims, dtype=np.int64))
    payload = raw[header_len:]
    if len(payload) != count:
        raise FormatError(
            f"{what}: truncated payload, header dims {dims} need {count} bytes, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Parse an IDX image/label file pair (plain or gzip-compressed)."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, f"{images_path} (images)")
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, f"{labels_path} (labels)")
    if len(images) != len(labels):
        raise FormatError(
            f"count mismatch: {images_path} has {len(images)} items, "
            f"{labels_path} has {len(labels)}"
        )
    if len(labels) and labels.max() >= NUM_CLASSES:
        raise FormatError(f"{labels_path} (labels): label {labels.max()} out of range")
    return LabeledDataset(images.copy(), labels.astype(np.int64))


def write_idx(dataset: LabeledDataset) -> tuple[bytes, bytes]:
    """Serialize to uncompressed IDX; returns (image_bytes, label_bytes)."""
    n, rows, cols = dataset.images.shape
    image_bytes = struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + dataset.images.astype(np.uint8).tobytes()
    label_bytes = struct.pack(">II", LABEL_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    return image_bytes, label_bytes


def bundled_paths(split: str) -> tuple[Path, Path]:
    """Paths of the bundled 10k-digit MNIST subset; split is 'train' or 't10k'."""
    return (BUNDLED_DIR / f"{split}-images-idx3-ubyte.gz",
            BUNDLED_DIR / f"{split}-labels-idx1-ubyte.gz")


# -- partitioning --------------------------------------------------------------

def partition(
    dataset: LabeledDataset,
    node_ids: Sequence[int],
    spec: PartitionSpec,
    rng: np.random.Generator,
) -> tuple[dict[int, LabeledDataset], dict[int, np.ndarray]]:
    """Give every node a random-size random sample of ``dataset``.

    Sizes are uniform on [min_samples, max_samples]. With overlap allowed,
    each node draws its samples without replacement from the full set,
    independently of the other nodes. Otherwise samples are dealt out of a
    single global permutation.

    Returns:
        (node_id -> dataset, node_id -> source indices)
    """
    spec.validate(len(dataset))
    sizes = rng.integers(spec.min_samples, spec.max_samples + 1, size=len(node_ids))
    indices: dict[int, np.ndarray] = {}
    if spec.overlap_allowed:
        for node_id, size in zip(node_ids, sizes):
            indices[node_id] = np.sort(rng.choice(len(dataset), size=int(size), replace=False))
    else:
        if sizes.sum() > len(dataset):
            raise InsufficientDataError(
                f"partition needs {int(sizes.sum())} samples without overlap, dataset has {len(dataset)}"
            )
        perm = rng.permutation(len(dataset))
        start = 0
        for node_id, size in zip(node_ids, sizes):
            indices[node_id] = np.sort(perm[start:start + size])
            start += size
    return {k: dataset.subset(v) for k, v in indices.items()}, indices


# -- attacks ------------------------------------------------------------------

def flip_labels(dataset: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(dataset.images, (dataset.labels + 1) % NUM_CLASSES)


def corrupt_params(
    params: np.ndarray,
    global_params: np.ndarray,
    attack: AttackSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Corrupt a submitted parameter vector according to ``attack``."""
    if attack.kind is AttackKind.SIGN_FLIP_GRADIENT:
        return 2.0 * global_params - params
    if attack.kind is AttackKind.SCALED_NOISE:
        if attack.magnitude == 0:
            return params.copy()
        return params + rng.normal(0.0, attack.magnitude, size=params.shape)
    return params.copy()


def apply_attack(artifact, attack: AttackSpec, rng: np.random.Generator | None = None,
                 global_params: np.ndarray | None = None):
    """Dispatch helper: datasets are label-flipped, parameter vectors corrupted.

    Attacks that do not act on the given artifact type return it unchanged.
    """
    if isinstance(artifact, LabeledDataset):
        if attack.kind is AttackKind.LABEL_FLIP:
            return flip_labels(artifact)
        return artifact
    if attack.kind is AttackKind.LABEL_FLIP:
        return np.array(artifact, copy=True)
    if attack.kind is AttackKind.SIGN_FLIP_GRADIENT and global_params is None:
        raise InvalidParameterError("sign-flip attack needs the received global parameters")
    if rng is None:
        rng = np.random.default_rng(0)
    return corrupt_params(np.asarray(artifact, dtype=np.float64), global_params, attack, rng)


def manifest_rows(indices: Mapping[int, Iterable[int]]):
    """Rows for the partition manifest CSV (node_id, sample_index)."""
    for node_id in sorted(indices):
        for idx in indices[node_id]:
            yield node_id, int(idx)
