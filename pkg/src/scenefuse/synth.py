"""Synthetic acoustic scenes for dataset-free end-to-end checks.

Every scene mixes three layers: a colored-noise bed (stationary), periodic
tone or band-noise bursts (quasi-stationary), and sparse random transients
(non-stationary).  Generation is bit-reproducible for a given profile and
seed pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import AudioClip, DatasetManifest, save_manifest, write_wav

#: final clips are scaled so their absolute peak sits here
TARGET_PEAK = 0.5

#: tilt and emphasis gains reference this frequency
TILT_REFERENCE_HZ = 1000.0

#: bed gain below this frequency is held at the floor's value
TILT_FLOOR_HZ = 20.0


@dataclass(frozen=True)
class ToneBurst:
    """Periodic sine bursts; level is dB relative to the unit-RMS bed."""

    freq_hz: float
    rate_hz: float
    duration_s: float
    level_db: float


@dataclass(frozen=True)
class NoiseBurst:
    """Periodic gaussian-band noise bursts."""

    center_hz: float
    width_hz: float
    rate_hz: float
    duration_s: float
    level_db: float


@dataclass(frozen=True)
class SceneProfile:
    """Statistical recipe for one scene class.

    ``emphases`` are (center_hz, width_hz, gain_db) gaussian bumps added to
    the bed's spectral tilt.  All stochastic choices inside a clip derive
    from (profile seed, clip seed), never from global state.
    """

    name: str
    seed: int
    tilt_db_per_octave: float = 0.0
    emphases: tuple = ()
    tone_bursts: tuple = ()
    noise_bursts: tuple = ()
    transient_rate_hz: float = 0.0
    transient_level_db: float = 0.0


def _validate_profile(profile: SceneProfile, sample_rate: int) -> None:
    if not profile.name:
        raise ValueError("profile needs a name")
    if profile.seed < 0:
        raise ValueError("profile seed must be nonnegative")
    nyquist = sample_rate / 2.0
    for center, width, _ in profile.emphases:
        if not 0.0 < center < nyquist or width <= 0.0:
            raise ValueError(f"bad emphasis band ({center}, {width}) at rate {sample_rate}")
    for burst in profile.tone_bursts:
        if not 0.0 < burst.freq_hz < nyquist:
            raise ValueError(f"tone frequency {burst.freq_hz} outside (0, {nyquist})")
        if burst.rate_hz <= 0.0 or burst.duration_s <= 0.0:
            raise ValueError("tone bursts need positive rate and duration")
    for burst in profile.noise_bursts:
        if not 0.0 < burst.center_hz < nyquist or burst.width_hz <= 0.0:
            raise ValueError(f"bad noise-burst band ({burst.center_hz}, {burst.width_hz})")
        if burst.rate_hz <= 0.0 or burst.duration_s <= 0.0:
            raise ValueError("noise bursts need positive rate and duration")
    if profile.transient_rate_hz < 0.0:
        raise ValueError("transient rate must be nonnegative")


def envelope_gain_db(profile: SceneProfile, freqs_hz) -> np.ndarray:
    """Designed bed gain (dB) at the given frequencies."""
    f = np.maximum(np.asarray(freqs_hz, dtype=np.float64), TILT_FLOOR_HZ)
    gain = profile.tilt_db_per_octave * np.log2(f / TILT_REFERENCE_HZ)
    for center, width, bump_db in profile.emphases:
        gain = gain + bump_db * np.exp(-0.5 * ((f - center) / width) ** 2)
    return gain


def _band_noise(rng: np.random.Generator, n: int, sample_rate: int,
                center: float, width: float) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    shaped = np.fft.irfft(spectrum * np.exp(-0.5 * ((freqs - center) / width) ** 2), n)
    rms = np.sqrt(np.mean(shaped**2))
    return shaped / rms if rms > 0.0 else shaped


def synth_scene(
    profile: SceneProfile, duration_s: float, sample_rate: int, seed: int
) -> AudioClip:
    """Render one clip of the profile; identical inputs give identical bytes."""
    if duration_s < 1.0:
        raise ValueError(f"duration must be at least 1 s, got {duration_s}")
    if sample_rate < 8000:
        raise ValueError(f"sample_rate must be at least 8000, got {sample_rate}")
    if seed < 0:
        raise ValueError("clip seed must be nonnegative")
    _validate_profile(profile, sample_rate)

    rng = np.random.default_rng([profile.seed, seed])
    n = int(round(duration_s * sample_rate))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)

    spectrum = np.fft.rfft(rng.standard_normal(n))
    bed = np.fft.irfft(spectrum * 10.0 ** (envelope_gain_db(profile, freqs) / 20.0), n)
    bed /= np.sqrt(np.mean(bed**2))
    signal = bed

    t_axis = np.arange(n) / sample_rate
    for burst in profile.tone_bursts:
        period = 1.0 / burst.rate_hz
        offset = rng.uniform(0.0, period)
        length = int(round(burst.duration_s * sample_rate))
        window = np.hanning(length)
        amp = 10.0 ** (burst.level_db / 20.0)
        start = offset
        while start + burst.duration_s <= duration_s:
            i0 = int(round(start * sample_rate))
            i1 = min(i0 + length, n)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            tone = np.sin(2.0 * np.pi * burst.freq_hz * t_axis[i0:i1] + phase)
            signal[i0:i1] += amp * window[: i1 - i0] * tone
            start += period

    for burst in profile.noise_bursts:
        period = 1.0 / burst.rate_hz
        offset = rng.uniform(0.0, period)
        length = int(round(burst.duration_s * sample_rate))
        window = np.hanning(length)
        amp = 10.0 ** (burst.level_db / 20.0)
        start = offset
        while start + burst.duration_s <= duration_s:
            i0 = int(round(start * sample_rate))
            i1 = min(i0 + length, n)
            chunk = _band_noise(rng, length, sample_rate, burst.center_hz, burst.width_hz)
            signal[i0:i1] += amp * window[: i1 - i0] * chunk[: i1 - i0]
            start += period

    if profile.transient_rate_hz > 0.0:
        count = rng.poisson(profile.transient_rate_hz * duration_s)
        length = max(int(round(0.005 * sample_rate)), 8)
        decay = np.exp(-np.arange(length) / (0.001 * sample_rate))
        amp = 10.0 ** (profile.transient_level_db / 20.0)
        for _ in range(count):
            i0 = int(rng.uniform(0.0, n - length))
            click = rng.standard_normal(length) * decay
            peak = np.abs(click).max()
            if peak > 0.0:
                signal[i0 : i0 + length] += amp * click / peak

    peak = np.abs(signal).max()
    if peak > 0.0:
        signal = signal * (TARGET_PEAK / peak)
    return AudioClip(
        samples=signal,
        sample_rate=sample_rate,
        source_id=f"{profile.name}:{seed}",
    )


def benchmark_profiles() -> list:
    """Five well-separated scene classes used by the end-to-end benchmark."""
    return [
        SceneProfile(
            name="rumble",
            seed=101,
            tilt_db_per_octave=-7.0,
            emphases=((55.0, 30.0, 9.0),),
            tone_bursts=(ToneBurst(110.0, 0.8, 0.5, -4.0),),
            transient_rate_hz=0.3,
            transient_level_db=-6.0,
        ),
        SceneProfile(
            name="hiss",
            seed=202,
            tilt_db_per_octave=4.0,
            emphases=((9000.0, 2500.0, 7.0),),
            noise_bursts=(NoiseBurst(5500.0, 900.0, 1.0, 0.4, 3.0),),
        ),
        SceneProfile(
            name="chime",
            seed=303,
            tilt_db_per_octave=0.0,
            emphases=((1200.0, 400.0, 3.0),),
            tone_bursts=(
                ToneBurst(880.0, 2.2, 0.25, 6.0),
                ToneBurst(1760.0, 1.1, 0.2, 3.0),
            ),
            transient_rate_hz=0.5,
            transient_level_db=0.0,
        ),
        SceneProfile(
            name="clatter",
            seed=404,
            tilt_db_per_octave=-1.0,
            emphases=((2400.0, 800.0, 6.0),),
            noise_bursts=(NoiseBurst(3000.0, 1200.0, 2.5, 0.12, 5.0),),
            transient_rate_hz=9.0,
            transient_level_db=6.0,
        ),
        SceneProfile(
            name="drone",
            seed=505,
            tilt_db_per_octave=-3.0,
            emphases=((320.0, 60.0, 10.0), (470.0, 60.0, 8.0)),
            tone_bursts=(ToneBurst(240.0, 1.4, 0.8, 2.0),),
        ),
    ]


def profile_by_name(name: str) -> SceneProfile:
    for profile in benchmark_profiles():
        if profile.name == name:
            return profile
    known = [p.name for p in benchmark_profiles()]
    raise ValueError(f"unknown profile {name!r}; built-in profiles: {known}")


def synthesize_dataset(
    profiles: list,
    clips_per_class: int,
    duration_s: float,
    sample_rate: int,
    out_dir: str | Path,
    base_seed: int,
) -> Path:
    """Write WAV clips and a manifest.tsv; returns the manifest path."""
    if clips_per_class < 1:
        raise ValueError("need at least 1 clip per class")
    names = [p.name for p in profiles]
    if len(set(names)) != len(names):
        raise ValueError("profile names must be unique")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for profile in profiles:
        for j in range(clips_per_class):
            clip = synth_scene(profile, duration_s, sample_rate, base_seed + j)
            filename = f"{profile.name}_{j:03d}.wav"
            write_wav(out_dir / filename, clip)
            entries.append((filename, profile.name))
    manifest = DatasetManifest(entries=entries, class_names=names)
    manifest_path = out_dir / "manifest.tsv"
    save_manifest(manifest, manifest_path)
    return manifest_path
