"""Cepstral feature extractors for acoustic scenes.

Six families share one framing and power-spectrum front end:

* mfcc    log mel subband power, DCT, 20 static -> 60 with deltas
* plp     bark bank, equal-loudness, cube root, LPC cepstra + energy -> 39
* pncc    gammatone bank, medium-time bias subtraction, x^(1/15) -> 60
* rcgcc   gammatone bank, smoothed noise-suppression gains, cube root -> 60
* spcc    log mel power projected onto its dominant subspace -> 60
* cepscom frame-wise [mfcc | pncc | rcgcc | spcc] -> 240
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from .dataio import AudioClip
from .spectral import (
    LOG_FLOOR,
    FeatureMatrix,
    FilterbankMatrix,
    FrameSequence,
    Spectrogram,
    append_deltas,
    apply_filterbank,
    cepstral_dct,
    frame_signal,
    make_filterbank,
    power_spectrum,
)

EXTRACTOR_NAMES = ("mfcc", "plp", "pncc", "rcgcc", "spcc", "cepscom")

#: multiplier on the per-channel minimum medium-time power
PNCC_BIAS_SCALE = 1.11

#: frames averaged to seed the recursive noise estimate
RCGCC_SEED_FRAMES = 5


@dataclass
class FeatureConfig:
    """Extraction parameters shared by all families.

    ``n_static`` governs the four DCT-based families; PLP static size is
    ``plp_model_order + 1`` (cepstra plus log energy).
    """

    frame_len: int = 2048
    hop: int = 1024
    n_channels: int = 40
    n_static: int = 20
    delta_window: int = 2
    spcc_energy_fraction: float = 0.90
    pncc_power_exponent: float = 1.0 / 15.0
    pncc_medium_window: int = 2
    rcgcc_smoothing: float = 0.9
    plp_model_order: int = 12

    def __post_init__(self) -> None:
        if self.frame_len <= 0 or self.hop <= 0 or self.hop > self.frame_len:
            raise ValueError(
                f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}"
            )
        if self.n_channels < 2:
            raise ValueError(f"n_channels must be >= 2, got {self.n_channels}")
        if not 1 <= self.n_static <= self.n_channels:
            raise ValueError(
                f"n_static must be in [1, {self.n_channels}], got {self.n_static}"
            )
        if self.delta_window < 1:
            raise ValueError(f"delta_window must be >= 1, got {self.delta_window}")
        if not 0.0 < self.spcc_energy_fraction <= 1.0:
            raise ValueError(
                f"spcc_energy_fraction must be in (0, 1], got {self.spcc_energy_fraction}"
            )
        if not 0.0 < self.pncc_power_exponent < 1.0:
            raise ValueError(
                f"pncc_power_exponent must be in (0, 1), got {self.pncc_power_exponent}"
            )
        if self.pncc_medium_window < 0:
            raise ValueError(
                f"pncc_medium_window must be >= 0, got {self.pncc_medium_window}"
            )
        if not 0.0 < self.rcgcc_smoothing < 1.0:
            raise ValueError(
                f"rcgcc_smoothing must be in (0, 1), got {self.rcgcc_smoothing}"
            )
        if self.plp_model_order < 1:
            raise ValueError(f"plp_model_order must be >= 1, got {self.plp_model_order}")
        # the autocorrelation sequence must cover model_order lags
        if self.plp_model_order + 2 > self.n_channels:
            raise ValueError(
                f"plp_model_order {self.plp_model_order} too high for "
                f"{self.n_channels} channels"
            )


@dataclass
class CepstraBundle:
    """All six feature matrices for one clip; frame counts agree."""

    mfcc: FeatureMatrix
    plp: FeatureMatrix
    pncc: FeatureMatrix
    rcgcc: FeatureMatrix
    spcc: FeatureMatrix
    cepscom: FeatureMatrix

    def __post_init__(self) -> None:
        counts = {m.n_frames for m in self.as_dict().values()}
        if len(counts) != 1:
            raise ValueError(f"frame counts disagree across extractors: {sorted(counts)}")

    def as_dict(self) -> dict[str, FeatureMatrix]:
        return {name: getattr(self, name) for name in EXTRACTOR_NAMES}


def expected_dim(extractor: str, cfg: FeatureConfig) -> int:
    if extractor == "plp":
        return 3 * (cfg.plp_model_order + 1)
    if extractor == "cepscom":
        return 4 * 3 * cfg.n_static
    if extractor in EXTRACTOR_NAMES:
        return 3 * cfg.n_static
    raise ValueError(f"unknown extractor {extractor!r}; expected one of {EXTRACTOR_NAMES}")


@lru_cache(maxsize=32)
def _bank(kind: str, n_channels: int, n_fft: int, sample_rate: int) -> FilterbankMatrix:
    # cached instances are shared; treat them as read-only
    return make_filterbank(kind, n_channels, n_fft, sample_rate)


def _prepare(clip: AudioClip, cfg: FeatureConfig) -> tuple[FrameSequence, Spectrogram]:
    frames = frame_signal(clip, cfg.frame_len, cfg.hop)
    return frames, power_spectrum(frames)


# --- mfcc ---

def _mfcc_from_spec(spec: Spectrogram, cfg: FeatureConfig) -> FeatureMatrix:
    bank = _bank("mel-triangular", cfg.n_channels, spec.n_fft, spec.sample_rate)
    subband = apply_filterbank(spec, bank)
    static = cepstral_dct(np.log(np.maximum(subband, LOG_FLOOR)), cfg.n_static)
    return append_deltas(FeatureMatrix(static, "mfcc"), cfg.delta_window)


def extract_mfcc(clip: AudioClip, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    cfg = cfg or FeatureConfig()
    _, spec = _prepare(clip, cfg)
    return _mfcc_from_spec(spec, cfg)


# --- plp ---

def equal_loudness(freqs_hz) -> np.ndarray:
    """Equal-loudness weighting applied to subband powers before compression."""
    f2 = np.asarray(freqs_hz, dtype=np.float64) ** 2
    return ((f2 + 56.8e6) * f2**2) / ((f2 + 6.3e6) ** 2 * (f2 + 0.38e9))


def levinson_durbin(autocorr: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Solve the normal equations for prediction filter A(z) = 1 + sum a_k z^-k.

    Accepts a single autocorrelation sequence or a batch (one per row) and
    returns (lpc, residual_energy) with lpc holding a_1..a_order.  A row whose
    lag-0 value is not positive yields all-zero coefficients and zero energy.
    """
    r = np.asarray(autocorr, dtype=np.float64)
    single = r.ndim == 1
    if single:
        r = r[None, :]
    if r.shape[1] < order + 1:
        raise ValueError(f"need {order + 1} autocorrelation lags, got {r.shape[1]}")
    dead = r[:, 0] <= 0.0
    r = r.copy()
    r[dead] = 0.0
    r[dead, 0] = 1.0
    n = r.shape[0]
    a = np.zeros((n, order + 1))
    a[:, 0] = 1.0
    err = r[:, 0].copy()
    for m in range(1, order + 1):
        acc = r[:, m] + np.einsum("ti,ti->t", a[:, 1:m], r[:, m - 1:0:-1])
        live = err > 0.0
        k = np.where(live, -acc / np.where(live, err, 1.0), 0.0)
        prev = a[:, : m + 1]
        a[:, : m + 1] = prev + k[:, None] * prev[:, ::-1]
        err = np.maximum(err * (1.0 - k * k), 0.0)
    err[dead] = 0.0
    lpc = a[:, 1:]
    if single:
        return lpc[0], err[0]
    return lpc, err


def lpc_to_cepstrum(lpc: np.ndarray, n_ceps: int) -> np.ndarray:
    """Cepstra c_1..c_n of the all-pole model 1/A(z), batched over rows."""
    a = np.atleast_2d(np.asarray(lpc, dtype=np.float64))
    if n_ceps > a.shape[1]:
        pad = np.zeros((a.shape[0], n_ceps - a.shape[1]))
        a = np.hstack([a, pad])
    ceps = np.zeros((a.shape[0], n_ceps))
    for m in range(1, n_ceps + 1):
        acc = a[:, m - 1].copy()
        for k in range(1, m):
            acc += (k / m) * ceps[:, k - 1] * a[:, m - k - 1]
        ceps[:, m - 1] = -acc
    if np.asarray(lpc).ndim == 1:
        return ceps[0]
    return ceps


def _plp_from_spec(
    frames: FrameSequence, spec: Spectrogram, cfg: FeatureConfig
) -> FeatureMatrix:
    bank = _bank("bark-trapezoidal", cfg.n_channels, spec.n_fft, spec.sample_rate)
    subband = apply_filterbank(spec, bank)
    compressed = np.cbrt(subband * equal_loudness(bank.center_freqs)[None, :])
    # the compressed subband profile acts as a power spectrum sampled on
    # [0, pi]; its even extension transforms back to an autocorrelation
    autocorr = np.fft.irfft(compressed, axis=1)[:, : cfg.plp_model_order + 1]
    lpc, _ = levinson_durbin(autocorr, cfg.plp_model_order)
    ceps = lpc_to_cepstrum(lpc, cfg.plp_model_order)
    energy = np.log(np.maximum((frames.frames**2).sum(axis=1), LOG_FLOOR))
    static = np.hstack([ceps, energy[:, None]])
    return append_deltas(FeatureMatrix(static, "plp"), cfg.delta_window)


def extract_plp(clip: AudioClip, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    cfg = cfg or FeatureConfig()
    frames, spec = _prepare(clip, cfg)
    return _plp_from_spec(frames, spec, cfg)


# --- pncc ---

class PnccStages(NamedTuple):
    """Intermediate powers of the bias-subtraction chain."""

    medium: np.ndarray
    subtracted: np.ndarray
    normalized: np.ndarray


def medium_time_power(subband: np.ndarray, window: int) -> np.ndarray:
    """Mean of each channel over frames t-window..t+window, clamped at edges."""
    values = np.asarray(subband, dtype=np.float64)
    if window == 0:
        return values.copy()
    n = values.shape[0]
    csum = np.vstack([np.zeros((1, values.shape[1])), np.cumsum(values, axis=0)])
    t = np.arange(n)
    lo = np.maximum(t - window, 0)
    hi = np.minimum(t + window, n - 1)
    return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)[:, None]


def pncc_power_stages(subband: np.ndarray, cfg: FeatureConfig) -> PnccStages:
    """Medium-time smoothing, floor-at-zero bias subtraction, rate restoration."""
    medium = medium_time_power(subband, cfg.pncc_medium_window)
    bias = PNCC_BIAS_SCALE * medium.min(axis=0)
    subtracted = np.maximum(medium - bias[None, :], 0.0)
    ratio = np.divide(
        subband, medium, out=np.zeros_like(subband), where=medium > 0.0
    )
    return PnccStages(medium=medium, subtracted=subtracted, normalized=subtracted * ratio)


def _pncc_from_spec(spec: Spectrogram, cfg: FeatureConfig) -> FeatureMatrix:
    bank = _bank("gammatone-magnitude", cfg.n_channels, spec.n_fft, spec.sample_rate)
    subband = apply_filterbank(spec, bank)
    stages = pncc_power_stages(subband, cfg)
    static = cepstral_dct(stages.normalized**cfg.pncc_power_exponent, cfg.n_static)
    return append_deltas(FeatureMatrix(static, "pncc"), cfg.delta_window)


def extract_pncc(clip: AudioClip, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    cfg = cfg or FeatureConfig()
    _, spec = _prepare(clip, cfg)
    return _pncc_from_spec(spec, cfg)


# --- rcgcc ---

def rcgcc_gains(subband: np.ndarray, smoothing: float) -> np.ndarray:
    """Smoothed suppression gains in [0.1, 1] tracking a recursive noise floor.

    The noise estimate N[t] = s*N[t-1] + (1-s)*Q[t] is seeded with the mean of
    the first frames; the raw gain (Q-N)/Q is clipped and then smoothed with
    the same constant, so purely stationary channels settle at the lower clip.
    """
    q = np.asarray(subband, dtype=np.float64)
    lam = smoothing
    seed = q[: min(RCGCC_SEED_FRAMES, q.shape[0])].mean(axis=0)
    noise, _ = lfilter(
        [1.0 - lam], [1.0, -lam], q, axis=0, zi=(lam * seed)[None, :]
    )
    raw = np.clip(
        np.divide(q - noise, q, out=np.zeros_like(q), where=q > 0.0), 0.1, 1.0
    )
    gains, _ = lfilter(
        [1.0 - lam], [1.0, -lam], raw, axis=0, zi=(lam * raw[0])[None, :]
    )
    return gains


def _rcgcc_from_spec(spec: Spectrogram, cfg: FeatureConfig) -> FeatureMatrix:
    bank = _bank("gammatone-magnitude", cfg.n_channels, spec.n_fft, spec.sample_rate)
    subband = apply_filterbank(spec, bank)
    gains = rcgcc_gains(subband, cfg.rcgcc_smoothing)
    static = cepstral_dct(np.cbrt(gains * subband), cfg.n_static)
    return append_deltas(FeatureMatrix(static, "rcgcc"), cfg.delta_window)


def extract_rcgcc(clip: AudioClip, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    cfg = cfg or FeatureConfig()
    _, spec = _prepare(clip, cfg)
    return _rcgcc_from_spec(spec, cfg)


# --- spcc ---

def subspace_rank(eigenvalues, fraction: float) -> int:
    """Smallest r whose leading eigenvalues reach the given energy fraction."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("eigenvalues must be a nonempty 1-D sequence")
    if np.any(lam < 0.0):
        raise ValueError("eigenvalues must be nonnegative")
    if np.any(np.diff(lam) > 0.0):
        raise ValueError("eigenvalues must be sorted descending")
    total = lam.sum()
    if total <= 0.0:
        raise ValueError("eigenvalue spectrum sums to zero")
    # compare ratios, not fraction * total: 9/10 meets 0.9 exactly
    ratios = np.cumsum(lam) / total
    return int(np.searchsorted(ratios, fraction, side="left")) + 1


def subspace_project(matrix: np.ndarray, fraction: float) -> tuple[np.ndarray, int]:
    """Project rows onto the dominant covariance subspace and reconstruct.

    Returns the reconstruction (mean added back) and the retained rank,
    chosen as the smallest one covering the requested eigenvalue-energy
    fraction.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise ValueError("subspace projection needs at least 2 rows")
    mean = matrix.mean(axis=0)
    centered = matrix - mean
    cov = centered.T @ centered / (matrix.shape[0] - 1)
    lam, vec = np.linalg.eigh(cov)
    lam = np.maximum(lam[::-1], 0.0)
    vec = vec[:, ::-1]
    rank = subspace_rank(lam, fraction)
    basis = vec[:, :rank]
    return centered @ basis @ basis.T + mean, rank


def _spcc_from_spec(spec: Spectrogram, cfg: FeatureConfig) -> FeatureMatrix:
    bank = _bank("mel-triangular", cfg.n_channels, spec.n_fft, spec.sample_rate)
    logmel = np.log(np.maximum(apply_filterbank(spec, bank), LOG_FLOOR))
    recon, _ = subspace_project(logmel, cfg.spcc_energy_fraction)
    static = cepstral_dct(recon, cfg.n_static)
    return append_deltas(FeatureMatrix(static, "spcc"), cfg.delta_window)


def extract_spcc(clip: AudioClip, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    cfg = cfg or FeatureConfig()
    _, spec = _prepare(clip, cfg)
    return _spcc_from_spec(spec, cfg)


# --- cepscom and bundles ---

def extract_cepscom(clip: AudioClip, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    """Frame-wise concatenation [mfcc | pncc | rcgcc | spcc]; plp stays out."""
    cfg = cfg or FeatureConfig()
    _, spec = _prepare(clip, cfg)
    return _cepscom_from_parts(
        _mfcc_from_spec(spec, cfg),
        _pncc_from_spec(spec, cfg),
        _rcgcc_from_spec(spec, cfg),
        _spcc_from_spec(spec, cfg),
    )


def _cepscom_from_parts(
    mfcc: FeatureMatrix,
    pncc: FeatureMatrix,
    rcgcc: FeatureMatrix,
    spcc: FeatureMatrix,
) -> FeatureMatrix:
    values = np.hstack([mfcc.values, pncc.values, rcgcc.values, spcc.values])
    return FeatureMatrix(values, "cepscom")


def extract_selected(
    clip: AudioClip, names, cfg: FeatureConfig | None = None
) -> dict[str, FeatureMatrix]:
    """Requested families only, all from one shared framing and spectrum."""
    cfg = cfg or FeatureConfig()
    wanted = set(names)
    unknown = wanted - set(EXTRACTOR_NAMES)
    if unknown:
        raise ValueError(
            f"unknown extractors {sorted(unknown)}; expected a subset of {EXTRACTOR_NAMES}"
        )
    compute = set(wanted)
    if "cepscom" in wanted:
        compute |= {"mfcc", "pncc", "rcgcc", "spcc"}
    frames, spec = _prepare(clip, cfg)
    parts: dict[str, FeatureMatrix] = {}
    if "mfcc" in compute:
        parts["mfcc"] = _mfcc_from_spec(spec, cfg)
    if "plp" in compute:
        parts["plp"] = _plp_from_spec(frames, spec, cfg)
    if "pncc" in compute:
        parts["pncc"] = _pncc_from_spec(spec, cfg)
    if "rcgcc" in compute:
        parts["rcgcc"] = _rcgcc_from_spec(spec, cfg)
    if "spcc" in compute:
        parts["spcc"] = _spcc_from_spec(spec, cfg)
    if "cepscom" in wanted:
        parts["cepscom"] = _cepscom_from_parts(
            parts["mfcc"], parts["pncc"], parts["rcgcc"], parts["spcc"]
        )
    return {name: parts[name] for name in EXTRACTOR_NAMES if name in wanted}


def extract_all(clip: AudioClip, cfg: FeatureConfig | None = None) -> CepstraBundle:
    """Every family from one shared framing and power spectrum."""
    parts = extract_selected(clip, EXTRACTOR_NAMES, cfg)
    return CepstraBundle(**parts)


_EXTRACTORS = {
    "mfcc": extract_mfcc,
    "plp": extract_plp,
    "pncc": extract_pncc,
    "rcgcc": extract_rcgcc,
    "spcc": extract_spcc,
    "cepscom": extract_cepscom,
}


def extract_by_name(
    name: str, clip: AudioClip, cfg: FeatureConfig | None = None
) -> FeatureMatrix:
    try:
        fn = _EXTRACTORS[name]
    except KeyError:
        raise ValueError(
            f"unknown extractor {name!r}; expected one of {EXTRACTOR_NAMES}"
        ) from None
    return fn(clip, cfg)
