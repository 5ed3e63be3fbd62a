"""Audio decoding, dataset manifests, deterministic splits, and binary feature storage.

WAV decoding is delegated to :mod:`scipy.io.wavfile`; every decoded clip is
reduced to a mono float64 signal in [-1, 1].  Manifests are plain
tab-separated text (``relative/path<TAB>label``), and feature matrices are
stored in a small checksummed binary container (magic ``SFS1``).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

FEATURE_STORE_MAGIC = b"SFS1"
FEATURE_STORE_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF


class FeatureStoreError(ValueError):
    """Malformed, truncated, or incompatible feature/model file."""


class ChecksumError(FeatureStoreError):
    """Stored checksum does not match the payload."""


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64_MASK
    return h


@dataclass
class AudioClip:
    """Mono audio signal with its sample rate.

    ``samples`` are dimensionless amplitudes in [-1, 1]; ``source_id``
    identifies the clip (normally its manifest-relative path).
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("clip must hold a nonempty 1-D sample sequence")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def _to_unit_range(data: np.ndarray) -> np.ndarray:
    """Scale integer PCM to [-1, 1] by the format's full-scale value."""
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        # scipy stores 24-bit PCM in the upper bytes of an int32
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise ValueError(f"unsupported WAV sample format: {data.dtype}")


def read_wav(path: str | Path) -> AudioClip:
    """Read a PCM or IEEE-float WAV file as a mono clip.

    Multichannel audio is averaged across channels after scaling to
    [-1, 1].  Raises ``FileNotFoundError`` for a missing file and
    ``ValueError`` for malformed headers or zero-length audio.
    """
    path = Path(path)
    rate, data = wavfile.read(str(path))
    if data.size == 0:
        raise ValueError(f"{path}: zero-length audio")
    samples = _to_unit_range(data)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples=samples, sample_rate=int(rate), source_id=path.name)


def write_wav(path: str | Path, clip: AudioClip, sample_format: str = "int16") -> None:
    """Write a clip as PCM16/PCM32 or IEEE float32 WAV."""
    x = clip.samples
    if sample_format == "int16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif sample_format == "int32":
        data = np.clip(np.round(x * 2147483648.0), -2147483648, 2147483647).astype(np.int32)
    elif sample_format == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unsupported sample_format: {sample_format!r}")
    wavfile.write(str(path), clip.sample_rate, data)


@dataclass
class DatasetManifest:
    """Ordered (clip_path, label) entries plus the canonical class order.

    ``class_names`` fixes the class index used everywhere downstream
    (scores, confusion matrices, fusion weights).
    """

    entries: list[tuple[str, str]]
    class_names: list[str]

    def __post_init__(self) -> None:
        known = set(self.class_names)
        if len(known) != len(self.class_names):
            raise ValueError("class_names must be unique")
        for clip_path, label in self.entries:
            if label not in known:
                raise ValueError(f"entry {clip_path!r} has unknown label {label!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def class_index(self, label: str) -> int:
        return self.class_names.index(label)

    def label_indices(self) -> np.ndarray:
        """Per-entry class index, in entry order."""
        lut = {name: i for i, name in enumerate(self.class_names)}
        return np.array([lut[label] for _, label in self.entries], dtype=np.int64)

    def subset(self, indices) -> "DatasetManifest":
        """New manifest with the selected entries; class order is preserved."""
        return DatasetManifest(
            entries=[self.entries[i] for i in indices],
            class_names=list(self.class_names),
        )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a ``path<TAB>label`` manifest; ``#`` lines are comments.

    Class order is the order of first label appearance.
    """
    path = Path(path)
    entries: list[tuple[str, str]] = []
    class_names: list[str] = []
    seen_paths: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'path<TAB>label', got {raw!r}")
        clip_path, label = fields[0].strip(), fields[1].strip()
        if not clip_path or not label:
            raise ValueError(f"{path}:{lineno}: empty path or label")
        if clip_path in seen_paths:
            raise ValueError(f"{path}:{lineno}: duplicate clip path {clip_path!r}")
        seen_paths.add(clip_path)
        if label not in class_names:
            class_names.append(label)
        entries.append((clip_path, label))
    if not entries:
        raise ValueError(f"{path}: empty manifest")
    return DatasetManifest(entries=entries, class_names=class_names)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [f"{clip_path}\t{label}" for clip_path, label in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_clip_path(manifest_path: str | Path, entry_path: str) -> Path:
    """Entry paths are taken relative to the manifest's directory."""
    p = Path(entry_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def split_dataset(
    manifest: DatasetManifest, train_fraction: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic stratified train/test split.

    Per class the train count is ``max(1, round(train_fraction * n))``
    (round half up).  Both outputs keep the parent's ``class_names`` so
    class indices stay stable.  ``train_fraction=0.25`` gives a 1:3
    train:test ratio on balanced datasets.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    labels = [label for _, label in manifest.entries]
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for name in manifest.class_names:
        class_idx = [i for i, label in enumerate(labels) if label == name]
        n = len(class_idx)
        if n < 2:
            raise ValueError(f"class {name!r} has {n} entries; need at least 2 to split")
        n_train = max(1, int(math.floor(train_fraction * n + 0.5)))
        perm = rng.permutation(n)
        chosen = {class_idx[j] for j in perm[:n_train]}
        train_idx.extend(i for i in class_idx if i in chosen)
        test_idx.extend(i for i in class_idx if i not in chosen)
    return manifest.subset(sorted(train_idx)), manifest.subset(sorted(test_idx))


@dataclass
class FeatureStore:
    """In-memory map from (source_id, extractor name) to a feature matrix."""

    records: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    format_version: int = FEATURE_STORE_VERSION

    def add(self, source_id: str, extractor: str, values: np.ndarray) -> None:
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("feature matrix must be 2-D (frames x dims)")
        for (_, name), existing in self.records.items():
            if name == extractor and existing.shape[1] != values.shape[1]:
                raise ValueError(
                    f"extractor {extractor!r} dimension mismatch: "
                    f"{existing.shape[1]} vs {values.shape[1]}"
                )
        self.records[(source_id, extractor)] = values

    def get(self, source_id: str, extractor: str) -> np.ndarray:
        return self.records[(source_id, extractor)]

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self.records

    def __len__(self) -> int:
        return len(self.records)

    def source_ids(self) -> list[str]:
        """Distinct source ids in insertion order."""
        out: list[str] = []
        for source_id, _ in self.records:
            if source_id not in out:
                out.append(source_id)
        return out

    def extractors(self) -> list[str]:
        out: list[str] = []
        for _, name in self.records:
            if name not in out:
                out.append(name)
        return out


# --- binary packing helpers (shared with the model-file writers) ---

def pack_u32(value: int) -> bytes:
    return struct.pack("<I", value)


def pack_u64(value: int) -> bytes:
    return struct.pack("<Q", value)


def pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return pack_u32(len(raw)) + raw


class _Reader:
    """Cursor over a byte buffer; raises FeatureStoreError on truncation."""

    def __init__(self, data: bytes, context: str):
        self.data = data
        self.pos = 0
        self.context = context

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FeatureStoreError(f"{self.context}: truncated file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * 8), dtype="<f8").copy()

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise FeatureStoreError(f"{self.context}: trailing bytes after payload")


def save_features(store: FeatureStore, path: str | Path) -> None:
    """Write the store to its binary container (bit-exact round-trip)."""
    parts = [FEATURE_STORE_MAGIC, pack_u32(store.format_version), pack_u32(len(store.records))]
    for (source_id, extractor), values in store.records.items():
        payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
        parts.append(pack_str(source_id))
        parts.append(pack_str(extractor))
        parts.append(pack_u32(values.shape[0]))
        parts.append(pack_u32(values.shape[1]))
        parts.append(payload)
        parts.append(pack_u64(fnv1a64(payload)))
    Path(path).write_bytes(b"".join(parts))


def load_features(path: str | Path, expected_version: int = FEATURE_STORE_VERSION) -> FeatureStore:
    """Read a feature container, verifying magic, version, and checksums."""
    path = Path(path)
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(4) != FEATURE_STORE_MAGIC:
        raise FeatureStoreError(f"{path}: not a feature store (bad magic)")
    version = reader.u32()
    if version != expected_version:
        raise FeatureStoreError(
            f"{path}: format version {version} does not match expected {expected_version}"
        )
    count = reader.u32()
    store = FeatureStore(format_version=version)
    for _ in range(count):
        source_id = reader.string()
        extractor = reader.string()
        rows = reader.u32()
        cols = reader.u32()
        raw = reader.take(rows * cols * 8)
        stored_sum = reader.u64()
        if fnv1a64(raw) != stored_sum:
            raise ChecksumError(f"{path}: checksum mismatch for ({source_id!r}, {extractor!r})")
        values = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
        store.add(source_id, extractor, values)
    reader.expect_end()
    return store
