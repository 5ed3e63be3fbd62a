"""Per-class diagonal-covariance Gaussian mixtures with EM training.

Each scene class gets its own mixture; a clip is scored per class by the sum
of frame log-likelihoods and labeled by the argmax.  Training is fully
deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import (
    FeatureStoreError,
    _Reader,
    fnv1a64,
    pack_u32,
    pack_u64,
)

GMM_BANK_MAGIC = b"SFG1"
GMM_BANK_VERSION = 1

#: responsibility mass below which a component counts as empty
EMPTY_COMPONENT_MASS = 1e-8

#: relative variance floor against the per-dimension global variance
VARIANCE_FLOOR_SCALE = 1e-3

#: absolute variance floor for dimensions that are constant in training data
VARIANCE_FLOOR_ABS = 1e-10


@dataclass
class GmmModel:
    """Diagonal-covariance mixture; weights sum to 1, variances positive."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    train_log_likelihoods: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.means.ndim != 2:
            raise ValueError("means must be K x dim")
        k = self.means.shape[0]
        if self.weights.shape != (k,) or self.variances.shape != self.means.shape:
            raise ValueError("weights/means/variances shapes disagree")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(self.variances <= 0.0):
            raise ValueError("variances must be positive")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class GmmBank:
    """One model per class, index-aligned with the manifest class order."""

    models: list

    def __post_init__(self) -> None:
        dims = {m.dim for m in self.models}
        if len(dims) > 1:
            raise ValueError(f"bank models disagree on dim: {sorted(dims)}")

    @property
    def n_classes(self) -> int:
        return len(self.models)

    @property
    def dim(self) -> int:
        if not self.models:
            raise ValueError("empty bank has no dim")
        return self.models[0].dim


def _component_log_likelihoods(model: GmmModel, features: np.ndarray) -> np.ndarray:
    """log(w_k * N(x_t)) as a frames x components matrix."""
    inv_var = 1.0 / model.variances
    # expand the quadratic form so everything is a frames x K matmul
    quad = (
        features**2 @ inv_var.T
        - 2.0 * (features @ (model.means * inv_var).T)
        + (model.means**2 * inv_var).sum(axis=1)[None, :]
    )
    log_norm = -0.5 * (
        model.dim * np.log(2.0 * np.pi) + np.log(model.variances).sum(axis=1)
    )
    return np.log(model.weights)[None, :] + log_norm[None, :] - 0.5 * quad


def _logsumexp_rows(values: np.ndarray) -> np.ndarray:
    peak = values.max(axis=1)
    return peak + np.log(np.exp(values - peak[:, None]).sum(axis=1))


def frame_log_likelihoods(model: GmmModel, features: np.ndarray) -> np.ndarray:
    """Per-frame mixture log-density."""
    features = _check_features(features, model.dim)
    return _logsumexp_rows(_component_log_likelihoods(model, features))


def log_likelihood(model: GmmModel, features: np.ndarray) -> float:
    """Total log-likelihood of a feature matrix, summed over frames."""
    return float(frame_log_likelihoods(model, features).sum())


def _check_features(features: np.ndarray, dim: int | None = None) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a nonempty frames x dim matrix")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    if dim is not None and features.shape[1] != dim:
        raise ValueError(f"feature dim {features.shape[1]} does not match model dim {dim}")
    return features


def _kmeanspp_centers(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = features.shape[0]
    centers = np.empty((k, features.shape[1]))
    centers[0] = features[rng.integers(n)]
    dist2 = ((features - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0.0:
            # remaining mass is zero: every point sits on a chosen center
            centers[j:] = features[rng.integers(n, size=k - j)]
            break
        centers[j] = features[rng.choice(n, p=dist2 / total)]
        dist2 = np.minimum(dist2, ((features - centers[j]) ** 2).sum(axis=1))
    return centers


def fit_gmm(
    features: np.ndarray,
    n_components: int,
    seed: int,
    max_iters: int = 100,
    tol: float = 1e-5,
) -> GmmModel:
    """EM training with seeded k-means++ means and a global-variance floor.

    Components whose responsibility mass collapses are reseeded at the
    frames the current model likes least.  Stops when the relative
    log-likelihood gain drops below ``tol``.
    """
    features = _check_features(features)
    n_frames, dim = features.shape
    if n_frames < n_components:
        raise ValueError(f"{n_frames} frames cannot support {n_components} components")

    rng = np.random.default_rng(seed)
    global_var = features.var(axis=0)
    floor = np.maximum(VARIANCE_FLOOR_SCALE * global_var, VARIANCE_FLOOR_ABS)

    weights = np.full(n_components, 1.0 / n_components)
    means = _kmeanspp_centers(features, n_components, rng)
    variances = np.maximum(np.tile(global_var, (n_components, 1)), floor)
    model = GmmModel(weights, means, variances)

    trace: list = []
    prev_ll = -np.inf
    sq = features**2
    for _ in range(max_iters):
        comp_ll = _component_log_likelihoods(model, features)
        frame_ll = _logsumexp_rows(comp_ll)
        ll = float(frame_ll.sum())
        trace.append(ll)
        if np.isfinite(prev_ll) and ll - prev_ll < tol * abs(prev_ll):
            break
        prev_ll = ll

        resp = np.exp(comp_ll - frame_ll[:, None])
        mass = resp.sum(axis=0)
        empty = np.flatnonzero(mass < EMPTY_COMPONENT_MASS)
        if empty.size:
            worst = np.argsort(frame_ll)[: empty.size]
            for comp, frame in zip(empty, worst):
                resp[:, comp] = 0.0
                resp[frame, comp] = 1.0
            mass = resp.sum(axis=0)

        weights = mass / mass.sum()
        means = (resp.T @ features) / mass[:, None]
        variances = np.maximum((resp.T @ sq) / mass[:, None] - means**2, floor)
        model = GmmModel(weights, means, variances)

    model.train_log_likelihoods = trace
    return model


def fit_gmm_bank(
    class_features: list,
    n_components: int,
    seeds: list,
    max_iters: int = 100,
    tol: float = 1e-5,
) -> GmmBank:
    """Train one model per class; seeds are index-aligned with classes."""
    if len(seeds) != len(class_features):
        raise ValueError("need one seed per class")
    models = [
        fit_gmm(feats, n_components, seed, max_iters=max_iters, tol=tol)
        for feats, seed in zip(class_features, seeds)
    ]
    return GmmBank(models)


def classify_gmm(bank: GmmBank, features: np.ndarray) -> np.ndarray:
    """Raw per-class scores (summed frame log-likelihoods) for one clip."""
    if not bank.models:
        raise ValueError("cannot classify with an empty bank")
    features = _check_features(features, bank.dim)
    return np.array([log_likelihood(model, features) for model in bank.models])


def predict_index(scores: np.ndarray) -> int:
    """Argmax with lowest-index tie-break."""
    return int(np.argmax(scores))


def save_gmm_bank(path, bank: GmmBank) -> None:
    """Write a bank with a trailing checksum over everything after the magic."""
    body = bytearray()
    body += pack_u32(GMM_BANK_VERSION)
    body += pack_u32(bank.n_classes)
    for model in bank.models:
        body += pack_u32(model.n_components)
        body += pack_u32(model.dim)
        body += model.weights.astype("<f8").tobytes()
        body += np.ascontiguousarray(model.means, dtype="<f8").tobytes()
        body += np.ascontiguousarray(model.variances, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(GMM_BANK_MAGIC)
        fh.write(bytes(body))
        fh.write(pack_u64(fnv1a64(bytes(body))))


def load_gmm_bank(path) -> GmmBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GMM_BANK_MAGIC:
        raise FeatureStoreError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 4 + 8 + 8:
        raise FeatureStoreError(f"{path}: truncated file")
    body, stored = blob[4:-8], int.from_bytes(blob[-8:], "little")
    if fnv1a64(body) != stored:
        raise FeatureStoreError(f"{path}: checksum mismatch")
    reader = _Reader(body, str(path))
    version = reader.u32()
    if version != GMM_BANK_VERSION:
        raise FeatureStoreError(f"{path}: unsupported version {version}")
    n_classes = reader.u32()
    models = []
    for _ in range(n_classes):
        k = reader.u32()
        dim = reader.u32()
        weights = reader.floats(k)
        means = reader.floats(k * dim).reshape(k, dim)
        variances = reader.floats(k * dim).reshape(k, dim)
        models.append(GmmModel(weights, means, variances))
    reader.expect_end()
    return GmmBank(models)
