"""The five cepstral families plus their concatenation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_toeplitz

from conftest import make_noise_clip, make_tone_clip
from scenefuse.dataio import AudioClip
from scenefuse.features import (
    EXTRACTOR_NAMES,
    FeatureConfig,
    equal_loudness,
    expected_dim,
    extract_all,
    extract_by_name,
    extract_cepscom,
    extract_mfcc,
    extract_plp,
    extract_pncc,
    extract_rcgcc,
    extract_selected,
    extract_spcc,
    levinson_durbin,
    lpc_to_cepstrum,
    medium_time_power,
    pncc_power_stages,
    rcgcc_gains,
    subspace_project,
    subspace_rank,
)
from scenefuse.spectral import (
    LOG_FLOOR,
    apply_filterbank,
    frame_count,
    frame_signal,
    make_filterbank,
    power_spectrum,
)


def comb_clip(seconds=3.0, sample_rate=44100, seed=5):
    """Harmonics locked to even FFT bins, so every 1024-hop frame of a
    2048-point analysis sees identical content."""
    rng = np.random.default_rng(seed)
    n = int(seconds * sample_rate)
    t = np.arange(n)
    sig = np.zeros(n)
    for m in (12, 40, 80, 200, 400):
        sig += np.sin(2 * np.pi * m * t / 2048 + rng.uniform(0, 2 * np.pi))
    return AudioClip(0.5 * sig / np.abs(sig).max(), sample_rate, "comb")


class TestConfig:
    def test_defaults_valid(self):
        cfg = FeatureConfig()
        assert cfg.frame_len == 2048 and cfg.hop == 1024
        assert cfg.n_channels == 40 and cfg.n_static == 20

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"hop": 4096},
            {"hop": 0},
            {"n_channels": 1},
            {"n_static": 0},
            {"n_static": 41},
            {"delta_window": 0},
            {"spcc_energy_fraction": 0.0},
            {"spcc_energy_fraction": 1.1},
            {"pncc_power_exponent": 1.0},
            {"pncc_medium_window": -1},
            {"rcgcc_smoothing": 1.0},
            {"plp_model_order": 0},
            {"plp_model_order": 39},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            FeatureConfig(**kwargs)

    def test_expected_dims(self):
        cfg = FeatureConfig()
        assert expected_dim("mfcc", cfg) == 60
        assert expected_dim("plp", cfg) == 39
        assert expected_dim("pncc", cfg) == 60
        assert expected_dim("rcgcc", cfg) == 60
        assert expected_dim("spcc", cfg) == 60
        assert expected_dim("cepscom", cfg) == 240


@pytest.fixture(scope="module")
def bundle():
    return extract_all(make_noise_clip(2.0, 44100, seed=1))


class TestDimensions:
    def test_all_dims(self, bundle):
        cfg = FeatureConfig()
        for name in EXTRACTOR_NAMES:
            mat = getattr(bundle, name)
            assert mat.dim == expected_dim(name, cfg)
            assert np.all(np.isfinite(mat.values))

    def test_frame_counts_agree(self, bundle):
        n = frame_count(2 * 44100, 2048, 1024)
        for name in EXTRACTOR_NAMES:
            assert getattr(bundle, name).n_frames == n

    def test_deterministic(self):
        clip = make_noise_clip(1.0, 16000, seed=2)
        a = extract_all(clip)
        b = extract_all(clip)
        for name in EXTRACTOR_NAMES:
            assert np.array_equal(getattr(a, name).values, getattr(b, name).values)


class TestSelection:
    def test_subset_returns_requested_only(self):
        clip = make_noise_clip(1.0, 16000, seed=3)
        out = extract_selected(clip, ["pncc", "mfcc"])
        assert list(out) == ["mfcc", "pncc"]

    def test_cepscom_pulls_in_parts(self):
        clip = make_noise_clip(1.0, 16000, seed=3)
        out = extract_selected(clip, ["cepscom"])
        assert list(out) == ["cepscom"]
        assert out["cepscom"].dim == 240

    def test_unknown_name_rejected(self):
        clip = make_noise_clip(1.0, 16000, seed=3)
        with pytest.raises(ValueError):
            extract_selected(clip, ["mfcc", "lpcc"])

    def test_extract_by_name(self):
        clip = make_noise_clip(1.0, 16000, seed=4)
        direct = extract_mfcc(clip)
        named = extract_by_name("mfcc", clip)
        assert np.array_equal(direct.values, named.values)
        with pytest.raises(ValueError):
            extract_by_name("unknown", clip)


class TestMfcc:
    def test_silence(self):
        clip = AudioClip(np.zeros(44100), 44100, "silence")
        mat = extract_mfcc(clip).values
        want_c0 = np.log(LOG_FLOOR) * np.sqrt(40)
        assert np.allclose(mat[:, 0], want_c0, atol=1e-9)
        assert np.abs(mat[:, 1:20]).max() < 1e-9
        # nothing changes over time, so deltas vanish
        assert np.abs(mat[:, 20:]).max() < 1e-9

    def test_amplitude_scaling_shifts_only_c0(self):
        clip = make_noise_clip(1.5, 44100, seed=6, amplitude=0.4)
        scaled = AudioClip(0.5 * clip.samples, clip.sample_rate, "scaled")
        a = extract_mfcc(clip).values
        b = extract_mfcc(scaled).values
        shift = np.sqrt(40) * np.log(0.25)
        assert np.allclose(b[:, 0] - a[:, 0], shift, atol=1e-9)
        assert np.abs(b[:, 1:20] - a[:, 1:20]).max() < 1e-9

    def test_tone_lands_in_matching_mel_channel(self):
        sr = 44100
        bank = make_filterbank("mel-triangular", 40, 2048, sr)
        for f0 in (1000.0, 5000.0):
            clip = make_tone_clip(f0, 1.0, sr)
            sub = apply_filterbank(power_spectrum(frame_signal(clip)), bank)
            got = int(np.argmax(sub.mean(axis=0)))
            want = int(np.argmin(np.abs(bank.center_freqs - f0)))
            assert abs(got - want) <= 1

    def test_distinct_tones_distinct_cepstra(self):
        a = extract_mfcc(make_tone_clip(500.0, 1.0, 44100)).values
        b = extract_mfcc(make_tone_clip(4000.0, 1.0, 44100)).values
        assert np.abs(a[:, 1:20].mean(0) - b[:, 1:20].mean(0)).max() > 1.0


class TestEqualLoudness:
    def test_anchor_values(self):
        assert equal_loudness(np.array([0.0]))[0] == 0.0
        assert equal_loudness(np.array([1000.0]))[0] == pytest.approx(
            0.002846801214963536, rel=1e-9
        )

    def test_monotone_rise_in_band(self):
        f = np.linspace(0, 22050, 400)
        e = equal_loudness(f)
        assert np.all(np.diff(e) > 0)
        assert e[-1] < 1.0


class TestLevinsonDurbin:
    def random_autocorr(self, rng, n_lags):
        # any positive spectrum transforms back to a valid autocorrelation
        psd = rng.uniform(0.1, 2.0, size=65)
        return np.fft.irfft(psd)[:n_lags]

    def test_matches_toeplitz_solver(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            order = int(rng.integers(1, 13))
            r = self.random_autocorr(rng, order + 1)
            lpc, err = levinson_durbin(r, order)
            want = solve_toeplitz(r[:order], -r[1 : order + 1]) if order > 1 else np.array(
                [-r[1] / r[0]]
            )
            scale = max(np.abs(want).max(), 1.0)
            assert np.abs(lpc - want).max() / scale < 1e-8
            direct_err = r[0] + lpc @ r[1 : order + 1]
            assert abs(err - direct_err) / max(abs(direct_err), 1e-12) < 1e-8
            assert 0.0 <= err <= r[0] + 1e-12

    def test_recovers_ar2(self):
        phi1, phi2 = 0.9, -0.2
        rng = np.random.default_rng(13)
        e = rng.standard_normal(20000)
        x = np.zeros(20000)
        for i in range(2, 20000):
            x[i] = phi1 * x[i - 1] + phi2 * x[i - 2] + e[i]
        r = np.array([x[: 20000 - k] @ x[k:] / 20000 for k in range(3)])
        lpc, _ = levinson_durbin(r, 2)
        assert np.abs(lpc - np.array([-phi1, -phi2])).max() < 5e-2

    def test_batch_equals_per_row(self):
        rng = np.random.default_rng(14)
        rows = np.stack([self.random_autocorr(rng, 13) for _ in range(6)])
        batch_lpc, batch_err = levinson_durbin(rows, 12)
        for t in range(6):
            lpc, err = levinson_durbin(rows[t], 12)
            assert np.array_equal(batch_lpc[t], lpc)
            assert batch_err[t] == err

    def test_dead_row_is_zero(self):
        rng = np.random.default_rng(15)
        rows = np.stack([self.random_autocorr(rng, 13), np.zeros(13)])
        lpc, err = levinson_durbin(rows, 12)
        assert np.abs(lpc[1]).max() == 0.0
        assert err[1] == 0.0
        assert np.abs(lpc[0]).max() > 0.0

    def test_too_few_lags_rejected(self):
        with pytest.raises(ValueError, match="lags"):
            levinson_durbin(np.ones(5), 5)


class TestLpcToCepstrum:
    def test_single_pole_series(self):
        rho = 0.8
        ceps = lpc_to_cepstrum(np.array([-rho]), 8)
        want = np.array([rho**n / n for n in range(1, 9)])
        assert np.allclose(ceps, want, atol=1e-12)

    def test_pole_power_sums(self):
        poles = np.array([0.9, -0.5, 0.6 * np.exp(1j * np.pi / 3), 0.6 * np.exp(-1j * np.pi / 3)])
        lpc = np.poly(poles).real[1:]
        ceps = lpc_to_cepstrum(lpc, 10)
        want = np.array([(poles**n).sum().real / n for n in range(1, 11)])
        assert np.allclose(ceps, want, atol=1e-9)

    def test_batched(self):
        rng = np.random.default_rng(16)
        lpc = rng.uniform(-0.4, 0.4, size=(4, 6))
        batch = lpc_to_cepstrum(lpc, 6)
        for t in range(4):
            assert np.allclose(batch[t], lpc_to_cepstrum(lpc[t], 6))


class TestPlp:
    def test_dim(self):
        mat = extract_plp(make_noise_clip(1.0, 44100, seed=17))
        assert mat.dim == 39

    def test_silence(self):
        clip = AudioClip(np.zeros(44100), 44100, "silence")
        mat = extract_plp(clip).values
        assert np.abs(mat[:, :12]).max() < 1e-12
        assert np.allclose(mat[:, 12], np.log(LOG_FLOOR))
        assert np.abs(mat[:, 13:]).max() < 1e-9

    def test_energy_column_is_frame_energy(self):
        clip = make_noise_clip(1.0, 44100, seed=18)
        frames = frame_signal(clip, 2048, 1024)
        want = np.log(np.maximum((frames.frames**2).sum(axis=1), LOG_FLOOR))
        mat = extract_plp(clip).values
        assert np.allclose(mat[:, 12], want, atol=1e-12)

    def test_model_order_sets_dim(self):
        cfg = FeatureConfig(plp_model_order=8)
        mat = extract_plp(make_noise_clip(1.0, 16000, seed=19), cfg)
        assert mat.dim == 3 * (8 + 1)


class TestPncc:
    def test_dim(self):
        assert extract_pncc(make_noise_clip(1.0, 44100, seed=20)).dim == 60

    def test_medium_time_power_oracle(self):
        rng = np.random.default_rng(21)
        sub = rng.uniform(0.1, 5.0, size=(9, 3))
        got = medium_time_power(sub, 2)
        for t in range(9):
            lo, hi = max(t - 2, 0), min(t + 2, 8)
            assert np.allclose(got[t], sub[lo : hi + 1].mean(axis=0))

    def test_medium_window_zero_is_identity(self):
        sub = np.random.default_rng(22).uniform(0.1, 1.0, size=(5, 2))
        assert np.array_equal(medium_time_power(sub, 0), sub)

    def test_stationary_input_fully_subtracted(self):
        sub = np.full((30, 4), 3.0)
        stages = pncc_power_stages(sub, FeatureConfig())
        assert np.array_equal(stages.medium, sub)
        assert stages.subtracted.max() == 0.0
        assert stages.normalized.max() == 0.0

    def test_bursts_survive_floor_removed(self):
        sub = np.full((60, 4), 1.0)
        sub[30:33, 2] = 25.0
        stages = pncc_power_stages(sub, FeatureConfig())
        assert stages.subtracted[30:33, 2].min() > 0.0
        assert stages.subtracted[:20].max() == 0.0
        assert stages.subtracted[45:].max() == 0.0

    def test_rate_restoration_formula(self):
        rng = np.random.default_rng(23)
        sub = rng.uniform(0.5, 4.0, size=(40, 6))
        stages = pncc_power_stages(sub, FeatureConfig())
        want = stages.subtracted * (sub / stages.medium)
        assert np.allclose(stages.normalized, want, atol=1e-12)

    def test_stationary_comb_is_suppressed(self):
        clip = comb_clip()
        frames = frame_signal(clip, 2048, 1024)
        bank = make_filterbank("gammatone-magnitude", 40, 2048, clip.sample_rate)
        sub = apply_filterbank(power_spectrum(frames), bank)
        stages = pncc_power_stages(sub, FeatureConfig())
        # a clip with no temporal structure loses essentially all its power
        assert stages.subtracted.mean() <= 0.15 * stages.medium.mean()
        assert np.abs(extract_pncc(clip).values).max() < 1e-8

    def test_power_law_fixed_points(self):
        exponent = FeatureConfig().pncc_power_exponent
        assert 0.0**exponent == 0.0
        assert 1.0**exponent == 1.0


class TestRcgcc:
    def test_dim(self):
        assert extract_rcgcc(make_noise_clip(1.0, 44100, seed=24)).dim == 60

    def test_constant_input_settles_at_floor(self):
        sub = np.full((200, 5), 7.0)
        gains = rcgcc_gains(sub, 0.9)
        assert np.allclose(gains, 0.1, atol=1e-12)

    def test_step_response(self):
        sub = np.ones((300, 3))
        sub[50:] = 100.0
        gains = rcgcc_gains(sub, 0.9)
        # before the step the channel is stationary
        assert np.allclose(gains[:50], 0.1)
        # the onset opens the gain, then the noise tracker catches up
        assert gains[50:80].max() > 0.25
        assert gains[-1].max() < 0.12

    def test_bounds(self):
        rng = np.random.default_rng(25)
        for _ in range(10):
            sub = rng.uniform(0.0, 10.0, size=(50, 4))
            gains = rcgcc_gains(sub, 0.9)
            assert gains.min() >= 0.1 - 1e-12
            assert gains.max() <= 1.0 + 1e-12

    def test_gains_scale_invariant(self):
        rng = np.random.default_rng(26)
        sub = rng.uniform(0.1, 5.0, size=(80, 4))
        a = rcgcc_gains(sub, 0.9)
        b = rcgcc_gains(1000.0 * sub, 0.9)
        assert np.allclose(a, b, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(6, 40), st.integers(1, 6))
    def test_bounds_property(self, seed, n_frames, n_channels):
        rng = np.random.default_rng(seed)
        sub = rng.uniform(0.0, 100.0, size=(n_frames, n_channels))
        gains = rcgcc_gains(sub, 0.9)
        assert gains.min() >= 0.1 - 1e-9
        assert gains.max() <= 1.0 + 1e-9


class TestSpcc:
    def test_subspace_rank_examples(self):
        assert subspace_rank(np.array([9.0, 1.0]), 0.9) == 1
        assert subspace_rank(np.array([1.0, 1.0, 1.0, 1.0]), 0.9) == 4
        assert subspace_rank(np.array([5.0, 3.0, 1.0, 1.0]), 0.9) == 3
        assert subspace_rank(np.array([4.0, 0.0]), 1.0) == 1

    def test_subspace_rank_minimality(self):
        rng = np.random.default_rng(27)
        for _ in range(30):
            lam = np.sort(rng.uniform(0.0, 5.0, size=rng.integers(2, 12)))[::-1]
            if lam.sum() == 0:
                continue
            r = subspace_rank(lam, 0.9)
            ratios = np.cumsum(lam) / lam.sum()
            assert ratios[r - 1] >= 0.9
            assert r == 1 or ratios[r - 2] < 0.9

    def test_subspace_rank_rejects_bad_input(self):
        with pytest.raises(ValueError):
            subspace_rank(np.array([1.0, 2.0]), 0.9)
        with pytest.raises(ValueError):
            subspace_rank(np.array([2.0, -1.0]), 0.9)
        with pytest.raises(ValueError):
            subspace_rank(np.array([0.0, 0.0]), 0.9)
        with pytest.raises(ValueError):
            subspace_rank(np.array([]), 0.9)

    def test_project_retains_energy(self):
        rng = np.random.default_rng(28)
        mat = rng.standard_normal((100, 40))
        recon, rank = subspace_project(mat, 0.9)
        centered = mat - mat.mean(axis=0)
        resid = recon - mat
        ratio = (resid**2).sum() / (centered**2).sum()
        assert ratio <= 0.10 + 1e-12
        assert 1 <= rank <= 40

    def test_rank_one_data(self):
        rng = np.random.default_rng(29)
        direction = rng.standard_normal(12)
        coords = rng.standard_normal(50)
        mat = 3.0 + np.outer(coords, direction)
        recon, rank = subspace_project(mat, 0.9)
        assert rank == 1
        assert np.abs(recon - mat).max() < 1e-9

    def test_needs_two_rows(self):
        with pytest.raises(ValueError, match="at least 2 rows"):
            subspace_project(np.ones((1, 5)), 0.9)
        clip = AudioClip(np.random.default_rng(30).standard_normal(2048), 44100)
        with pytest.raises(ValueError, match="at least 2 rows"):
            extract_spcc(clip)

    def test_dim(self):
        assert extract_spcc(make_noise_clip(1.0, 44100, seed=31)).dim == 60


class TestCepscom:
    def test_concatenation_order(self):
        clip = make_noise_clip(1.5, 44100, seed=32)
        combined = extract_cepscom(clip).values
        assert combined.shape[1] == 240
        blocks = [extract_mfcc, extract_pncc, extract_rcgcc, extract_spcc]
        for i, fn in enumerate(blocks):
            assert np.array_equal(combined[:, 60 * i : 60 * (i + 1)], fn(clip).values)

    def test_bundle_consistency(self):
        clip = make_noise_clip(1.0, 44100, seed=33)
        bundle = extract_all(clip)
        assert np.array_equal(
            bundle.cepscom.values[:, :60], bundle.mfcc.values
        )
        assert bundle.cepscom.dim == 4 * bundle.mfcc.dim
