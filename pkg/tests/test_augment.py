import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scmtsed.augment import (
    ShiftSpec,
    add_noise,
    freq_shift,
    mix,
    sample_shift,
    shift_labels,
    time_shift,
)
from scmtsed.features import LOG_FLOOR


@pytest.fixture
def spec():
    return np.random.default_rng(0).normal(size=(648, 128)).astype(np.float32)


class TestSampleShift:
    def test_bounds(self):
        rng = np.random.default_rng(0)
        draws = [sample_shift(rng) for _ in range(10_000)]
        taus = np.array([d.tau for d in draws])
        nus = np.array([d.nu for d in draws])
        assert np.abs(taus).max() <= 130
        assert np.abs(nus).max() <= 4
        assert abs(taus.mean()) <= 3

    def test_spread_matches_two_sigma_bound(self):
        rng = np.random.default_rng(1)
        taus = np.array([sample_shift(rng).tau for _ in range(10_000)])
        # sigma = 64.8 frames before truncation at 2 sigma (std of the truncated law is ~0.88 sigma)
        assert 50 < taus.std() < 62

    def test_seeded_streams_identical(self):
        a = [sample_shift(np.random.default_rng(5)) for _ in range(3)]
        r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
        assert [sample_shift(r1) for _ in range(50)] == [sample_shift(r2) for _ in range(50)]
        assert a[0] == a[1]

    def test_quantum(self):
        rng = np.random.default_rng(2)
        assert all(sample_shift(rng, quantum=8).tau % 8 == 0 for _ in range(500))


class TestTimeShift:
    def test_zero_and_full_period(self, spec):
        np.testing.assert_array_equal(time_shift(spec, 0), spec)
        np.testing.assert_array_equal(time_shift(spec, 648), spec)

    @given(st.integers(-700, 700))
    @settings(max_examples=50, deadline=None)
    def test_inverse(self, tau):
        x = np.arange(648 * 3, dtype=np.float32).reshape(648, 3)
        np.testing.assert_array_equal(time_shift(time_shift(x, tau), -tau), x)

    @given(st.integers(-300, 300), st.integers(-300, 300))
    @settings(max_examples=50, deadline=None)
    def test_group_action(self, a, b):
        x = np.arange(648 * 2).reshape(648, 2)
        np.testing.assert_array_equal(time_shift(time_shift(x, a), b), time_shift(x, (a + b) % 648))

    def test_torch_matches_numpy(self, spec):
        np.testing.assert_array_equal(time_shift(torch.from_numpy(spec), 37).numpy(), time_shift(spec, 37))


class TestShiftLabels:
    def test_identity(self):
        labels = np.random.default_rng(0).integers(0, 2, size=(81, 10))
        np.testing.assert_array_equal(shift_labels(labels, 0), labels)

    def test_single_frame_moves(self):
        labels = np.zeros((81, 10))
        labels[5, 2] = 1
        out = shift_labels(labels, 8 * 79)  # 79 output frames
        assert out[(5 + 79) % 81, 2] == 1 and out.sum() == 1

    def test_roundtrip(self):
        labels = np.random.default_rng(1).integers(0, 2, size=(81, 10))
        np.testing.assert_array_equal(shift_labels(shift_labels(labels, 40), -40), labels)

    def test_rounds_to_nearest_output_frame(self):
        labels = np.zeros((81, 10))
        labels[0, 0] = 1
        assert shift_labels(labels, 11)[1, 0] == 1  # 11 input frames = 1.375 output frames

    def test_commutes_with_identity_model(self):
        # an identity "model" at output rate: frames pooled by 8
        x = np.random.default_rng(2).normal(size=(648, 10))
        model = lambda s: s.reshape(81, 8, 10).mean(axis=1)
        for tau in (-64, 0, 16, 120):
            np.testing.assert_allclose(model(time_shift(x, tau)), shift_labels(model(x), tau))


class TestFreqShift:
    def test_zero(self, spec):
        np.testing.assert_array_equal(freq_shift(spec, 0), spec)

    @pytest.mark.parametrize("nu", [-4, -1, 2, 4])
    def test_single_bin(self, nu):
        x = np.full((648, 128), LOG_FLOOR, dtype=np.float32)
        x[:, 60] = 1.0
        out = freq_shift(x, nu)
        active = np.flatnonzero(out[0] > LOG_FLOOR)
        assert active.tolist() == [60 + nu]
        if nu > 0:
            assert np.all(out[:, :nu] == np.float32(LOG_FLOOR))
        else:
            assert np.all(out[:, nu:] == np.float32(LOG_FLOOR))

    @pytest.mark.parametrize("nu", [-4, -3, 1, 4])
    def test_inverse_up_to_edges(self, spec, nu):
        back = freq_shift(freq_shift(spec, nu), -nu)
        k = abs(nu)
        keep = slice(0, 128 - k) if nu > 0 else slice(k, 128)
        np.testing.assert_array_equal(back[:, keep], spec[:, keep])
        lost = np.ones(128, bool)
        lost[keep] = False
        assert lost.sum() == k
        assert np.all(back[:, lost] == np.float32(LOG_FLOOR))

    def test_per_bin_fill(self):
        x = torch.zeros(2, 5, 6)
        fill = torch.arange(6, dtype=torch.float32)
        out = freq_shift(x, 2, fill)
        assert torch.equal(out[..., :2], fill[:2].expand(2, 5, 2))
        assert torch.equal(out[..., 2:], torch.zeros(2, 5, 4))


class TestMix:
    def test_endpoints(self, spec):
        other = spec[::-1].copy()
        np.testing.assert_array_equal(mix(spec, other, 1.0), spec)
        np.testing.assert_array_equal(mix(spec, other, 0.0), other)

    @given(st.floats(0, 1))
    @settings(max_examples=30, deadline=None)
    def test_self_mix_and_affinity(self, lam):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        np.testing.assert_allclose(mix(a, a, lam), a, atol=1e-12)
        np.testing.assert_allclose(mix(a, b, lam) + mix(b, a, lam), a + b, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mix(np.zeros((2, 3)), np.zeros((3, 2)), 0.5)


class TestNoise:
    def test_zero_sigma_identity(self, spec):
        np.testing.assert_array_equal(add_noise(spec, 0.0), spec)

    def test_std(self):
        x = np.zeros(100_000)
        out = add_noise(x, 0.5, np.random.default_rng(0))
        assert abs(np.std(out - x) - 0.5) < 0.01

    def test_seeded(self):
        x = torch.zeros(10, 10)
        a = add_noise(x, 0.5, torch.Generator().manual_seed(3))
        b = add_noise(x, 0.5, torch.Generator().manual_seed(3))
        assert torch.equal(a, b)
        np.testing.assert_array_equal(
            add_noise(np.zeros(5), 0.5, np.random.default_rng(1)), add_noise(np.zeros(5), 0.5, np.random.default_rng(1))
        )

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            add_noise(np.zeros(3), -1.0)


def test_shiftspec_is_hashable():
    assert len({ShiftSpec(1, 2), ShiftSpec(1, 2)}) == 1
