"""Shared fixtures: deterministic clips and a small synthetic dataset."""

import numpy as np
import pytest

from scenefuse.dataio import AudioClip
from scenefuse.synth import profile_by_name, synthesize_dataset


def make_noise_clip(seconds=2.0, sample_rate=16000, seed=0, amplitude=0.3):
    rng = np.random.default_rng(seed)
    n = int(seconds * sample_rate)
    return AudioClip(amplitude * rng.standard_normal(n), sample_rate, f"noise{seed}")


def make_tone_clip(freq_hz, seconds=2.0, sample_rate=16000, amplitude=0.5):
    t = np.arange(int(seconds * sample_rate)) / sample_rate
    return AudioClip(amplitude * np.sin(2 * np.pi * freq_hz * t), sample_rate, f"tone{freq_hz}")


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """Three classes, eight 1.5 s clips each, 16 kHz; kept small so the
    pipeline tests stay fast.  Profiles are the benchmark ones that fit
    under an 8 kHz nyquist."""
    out = tmp_path_factory.mktemp("mini") / "data"
    profiles = [profile_by_name(n) for n in ("rumble", "chime", "drone")]
    manifest_path = synthesize_dataset(profiles, 8, 1.5, 16000, out, 42)
    return manifest_path
