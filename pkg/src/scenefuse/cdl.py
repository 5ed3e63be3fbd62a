"""Clip-level covariance descriptors with discriminative projection.

A clip becomes a regularized covariance matrix over its frame features,
mapped to a flat vector through the matrix logarithm, projected by a
Fisher discriminant, and labeled by distance to class centroids (or to the
nearest stored training sample).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dataio import FeatureStoreError, _Reader, fnv1a64, pack_u32, pack_u64

CDL_MODEL_MAGIC = b"SFC1"
CDL_MODEL_VERSION = 1

#: identity scale used when features are constant and the trace vanishes
CONSTANT_FEATURE_EPS = 1e-6

#: relative shrinkage added to the within-class scatter
SHRINKAGE_SCALE = 1e-2

CLASSIFY_MODES = ("centroid", "1-nearest-sample")


@dataclass
class CovarianceDescriptor:
    """Symmetric positive-definite summary of one clip's feature frames."""

    matrix: np.ndarray
    source_id: str = ""

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("descriptor matrix must be square")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("descriptor matrix contains non-finite values")
        if np.abs(self.matrix - self.matrix.T).max() > 1e-10:
            raise ValueError("descriptor matrix is not symmetric")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass
class CdlProjection:
    """Discriminant projection plus per-class centroids in projected space.

    ``train_points``/``train_labels`` hold the projected training set when
    the model was fit with ``store_samples``; the nearest-sample classify
    mode needs them and they are not written to model files.
    """

    projection: np.ndarray
    class_centroids: np.ndarray
    train_mean: np.ndarray
    dim: int
    train_points: np.ndarray | None = None
    train_labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.projection = np.asarray(self.projection, dtype=np.float64)
        self.class_centroids = np.asarray(self.class_centroids, dtype=np.float64)
        self.train_mean = np.asarray(self.train_mean, dtype=np.float64)
        d_vec = half_vec_length(self.dim)
        if self.projection.shape[1] != d_vec or self.train_mean.shape != (d_vec,):
            raise ValueError("projection width must equal dim*(dim+1)/2")
        if self.class_centroids.shape[1] != self.projection.shape[0]:
            raise ValueError("centroid width must equal projection height")

    @property
    def n_classes(self) -> int:
        return self.class_centroids.shape[0]

    @property
    def d_out(self) -> int:
        return self.projection.shape[0]


def half_vec_length(dim: int) -> int:
    return dim * (dim + 1) // 2


def half_vec(matrix: np.ndarray) -> np.ndarray:
    """Row-major upper triangle with off-diagonals scaled by sqrt(2).

    The scaling makes Euclidean inner products of vectors equal Frobenius
    inner products of the symmetric matrices they encode.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    dim = matrix.shape[0]
    rows, cols = np.triu_indices(dim)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return matrix[rows, cols] * scale


def half_vec_inverse(vec: np.ndarray, dim: int) -> np.ndarray:
    """Rebuild the symmetric matrix encoded by :func:`half_vec`."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (half_vec_length(dim),):
        raise ValueError(f"expected length {half_vec_length(dim)} for dim {dim}")
    rows, cols = np.triu_indices(dim)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    out = np.zeros((dim, dim))
    out[rows, cols] = vec / scale
    return out + np.triu(out, 1).T


def covariance_descriptor(
    features: np.ndarray, eps_scale: float = 1e-3, source_id: str = ""
) -> CovarianceDescriptor:
    """Sample covariance over frames plus a trace-scaled identity ridge."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("covariance needs a matrix with at least 2 frames")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    centered = features - features.mean(axis=0)
    cov = centered.T @ centered / (features.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    trace = float(np.trace(cov))
    dim = cov.shape[0]
    if trace <= 0.0:
        # constant features carry no covariance structure at all
        return CovarianceDescriptor(CONSTANT_FEATURE_EPS * np.eye(dim), source_id)
    eps = eps_scale * trace / dim
    return CovarianceDescriptor(cov + eps * np.eye(dim), source_id)


def log_embed(desc: CovarianceDescriptor) -> np.ndarray:
    """Half-vectorized matrix logarithm of an SPD descriptor."""
    lam, vec = np.linalg.eigh(desc.matrix)
    if lam[0] <= 0.0:
        raise ValueError(
            f"descriptor {desc.source_id!r} is not positive definite "
            f"(smallest eigenvalue {lam[0]:.3e})"
        )
    log_mat = (vec * np.log(lam)[None, :]) @ vec.T
    return half_vec(0.5 * (log_mat + log_mat.T))


def _class_partitions(labels: np.ndarray, n_classes: int) -> list:
    return [np.flatnonzero(labels == c) for c in range(n_classes)]


def fit_cdl(
    descriptors: list,
    labels,
    n_classes: int | None = None,
    store_samples: bool = True,
) -> CdlProjection:
    """Fisher discriminant over centered log embeddings.

    The scatter matrices are never materialized at full size: all
    generalized eigenvectors of interest live in the span of the training
    embeddings, so the problem is solved in that span and mapped back.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(descriptors) != labels.shape[0]:
        raise ValueError("need one label per descriptor")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError("labels out of range")
    parts = _class_partitions(labels, n_classes)
    for c, idx in enumerate(parts):
        if idx.size < 2:
            raise ValueError(f"class {c} has {idx.size} descriptors, need at least 2")
    dims = {d.dim for d in descriptors}
    if len(dims) != 1:
        raise ValueError(f"descriptors disagree on dim: {sorted(dims)}")
    dim = dims.pop()

    embeddings = np.stack([log_embed(d) for d in descriptors])
    d_vec = embeddings.shape[1]
    train_mean = embeddings.mean(axis=0)
    centered = embeddings - train_mean

    # basis of the span of the centered embeddings
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    tol = svals.max(initial=0.0) * max(centered.shape) * np.finfo(np.float64).eps
    rank = int((svals > tol).sum())
    if rank == 0:
        raise ValueError("all embeddings are identical; scatter is degenerate")
    basis = vt[:rank]

    reduced = centered @ basis.T
    class_means = np.stack([reduced[idx].mean(axis=0) for idx in parts])
    within = reduced - class_means[labels]
    scatter_w = within.T @ within
    counts = np.array([idx.size for idx in parts], dtype=np.float64)
    between_rows = class_means * np.sqrt(counts)[:, None]
    scatter_b = between_rows.T @ between_rows

    # within-class rows stay inside the span, so this trace equals the
    # full-dimensional one and the shrinkage level is unchanged
    gamma = SHRINKAGE_SCALE * float(np.trace(scatter_w)) / d_vec
    if gamma <= 0.0:
        gamma = 1e-12
    eigvals, eigvecs = scipy.linalg.eigh(
        scatter_b, scatter_w + gamma * np.eye(rank)
    )
    d_out = min(n_classes - 1, rank)
    top = eigvecs[:, ::-1][:, :d_out]
    projection = (basis.T @ top).T

    projected = centered @ projection.T
    centroids = np.stack([projected[idx].mean(axis=0) for idx in parts])
    return CdlProjection(
        projection=projection,
        class_centroids=centroids,
        train_mean=train_mean,
        dim=dim,
        train_points=projected if store_samples else None,
        train_labels=labels.copy() if store_samples else None,
    )


def project_descriptor(proj: CdlProjection, desc: CovarianceDescriptor) -> np.ndarray:
    if desc.dim != proj.dim:
        raise ValueError(f"descriptor dim {desc.dim} does not match model dim {proj.dim}")
    return proj.projection @ (log_embed(desc) - proj.train_mean)


def classify_cdl(
    proj: CdlProjection, query: CovarianceDescriptor, mode: str = "centroid"
) -> np.ndarray:
    """Raw per-class scores: negated distances in the projected space."""
    if mode not in CLASSIFY_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {CLASSIFY_MODES}")
    point = project_descriptor(proj, query)
    if mode == "centroid":
        dists = np.linalg.norm(proj.class_centroids - point[None, :], axis=1)
    else:
        if proj.train_points is None or proj.train_labels is None:
            raise ValueError("model was fit without stored samples; refit to use "
                             "the nearest-sample mode")
        all_d = np.linalg.norm(proj.train_points - point[None, :], axis=1)
        dists = np.array(
            [all_d[proj.train_labels == c].min() for c in range(proj.n_classes)]
        )
    return -dists


def save_cdl_model(path, proj: CdlProjection) -> None:
    """Write projection, centroids, and mean; stored samples stay in memory."""
    body = bytearray()
    body += pack_u32(CDL_MODEL_VERSION)
    body += pack_u32(proj.dim)
    body += pack_u32(proj.d_out)
    body += pack_u32(proj.n_classes)
    body += np.ascontiguousarray(proj.projection, dtype="<f8").tobytes()
    body += np.ascontiguousarray(proj.class_centroids, dtype="<f8").tobytes()
    body += proj.train_mean.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CDL_MODEL_MAGIC)
        fh.write(bytes(body))
        fh.write(pack_u64(fnv1a64(bytes(body))))


def load_cdl_model(path) -> CdlProjection:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CDL_MODEL_MAGIC:
        raise FeatureStoreError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 4 + 8 + 8:
        raise FeatureStoreError(f"{path}: truncated file")
    body, stored = blob[4:-8], int.from_bytes(blob[-8:], "little")
    if fnv1a64(body) != stored:
        raise FeatureStoreError(f"{path}: checksum mismatch")
    reader = _Reader(body, str(path))
    version = reader.u32()
    if version != CDL_MODEL_VERSION:
        raise FeatureStoreError(f"{path}: unsupported version {version}")
    dim = reader.u32()
    d_out = reader.u32()
    n_classes = reader.u32()
    d_vec = half_vec_length(dim)
    projection = reader.floats(d_out * d_vec).reshape(d_out, d_vec)
    centroids = reader.floats(n_classes * d_out).reshape(n_classes, d_out)
    mean = reader.floats(d_vec)
    reader.expect_end()
    return CdlProjection(
        projection=projection, class_centroids=centroids, train_mean=mean, dim=dim
    )
