import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazeibc.metrics import (MetricError, SparcConfig, average_success, r_squared, sparc,
                             sparc_of_speed, speed_profile)
from gazeibc.synthetic import minimum_jerk


def brute_force_sparc(speed, fs=30.0, pad=4, fc=10.0, thr=0.05):
    """Reference written from the definition with an explicit DFT sum."""
    v = [float(x) for x in speed]
    n = len(v)
    nfft = 2 ** (math.ceil(math.log2(n)) + pad)
    mags = []
    for k in range(nfft // 2 + 1):
        re = sum(v[t] * math.cos(2 * math.pi * k * t / nfft) for t in range(n))
        im = -sum(v[t] * math.sin(2 * math.pi * k * t / nfft) for t in range(n))
        mags.append(math.hypot(re, im))
    peak = max(mags)
    mags = [m / peak for m in mags]
    freqs = [k * fs / nfft for k in range(len(mags))]
    band = [k for k in range(len(mags)) if freqs[k] <= fc]
    hits = [k for k in band if mags[k] >= thr]
    lo, hi = hits[0], hits[-1]
    if hi == lo:
        return 0.0
    span = freqs[hi] - freqs[lo]
    arc = 0.0
    for k in range(lo, hi):
        arc += math.hypot((freqs[k + 1] - freqs[k]) / span, mags[k + 1] - mags[k])
    return -arc


@pytest.mark.parametrize("seed", range(6))
def test_sparc_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 40))
    speed = np.abs(rng.normal(size=n)) + rng.uniform(0, 2) * np.hanning(n)
    got = sparc_of_speed(speed).value
    assert abs(got - brute_force_sparc(speed)) < 1e-9


def test_sparc_matches_brute_force_on_min_jerk():
    pos = minimum_jerk([0.0], [1.0], 30)[:, 0]
    speed = speed_profile(pos, 30.0)
    assert abs(sparc(pos).value - brute_force_sparc(speed)) < 1e-9


def _noisy_pair(seed, amp=0.02):
    rng = np.random.default_rng(seed)
    pos = minimum_jerk([0.0], [0.8], 45)[:, 0]
    return pos, pos + amp * rng.standard_normal(len(pos))


def test_min_jerk_smoother_than_noisy():
    wins = sum(sparc(a).value > sparc(b).value for a, b in map(_noisy_pair, range(50)))
    assert wins >= 48


def test_more_noise_is_not_smoother():
    medians = []
    for amp in (0.0, 0.005, 0.02, 0.05):
        medians.append(np.median([sparc(_noisy_pair(s, amp)[1]).value for s in range(50)]))
    assert all(b <= a for a, b in zip(medians, medians[1:]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_sparc_amplitude_invariance_and_sign(seed, scale):
    rng = np.random.default_rng(seed)
    speed = np.abs(rng.normal(size=int(rng.integers(8, 120))))
    a = sparc_of_speed(speed).value
    assert abs(sparc_of_speed(scale * speed).value - a) < 1e-9
    assert a <= 0.0


def test_sparc_no_motion_and_short_series():
    res = sparc(np.full(20, 0.4))
    assert res.value == 0.0 and res.no_motion
    with pytest.raises(MetricError):
        sparc(np.arange(7.0))


def test_sparc_config_validation():
    with pytest.raises(MetricError):
        SparcConfig(cutoff_freq=15.0)
    with pytest.raises(MetricError):
        SparcConfig(amplitude_threshold=1.0)
    with pytest.raises(MetricError):
        SparcConfig(padding_level=-1)


def test_r_squared_identities():
    t = np.array([0.1, 0.4, 0.2, 0.9])
    assert r_squared(t, t) == 1.0
    assert r_squared(np.full(4, t.mean()), t) == pytest.approx(0.0, abs=1e-15)
    p = np.array([0.0, 0.5, 0.1, 1.0])
    direct = 1 - sum((p - t) ** 2) / sum((t - t.mean()) ** 2)
    assert r_squared(p, t) == pytest.approx(direct, rel=1e-14)
    with pytest.raises(MetricError):
        r_squared(t, np.full(4, 2.0))
    with pytest.raises(MetricError):
        r_squared(t[:3], t)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_r_squared_at_most_one(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=10)
    assert r_squared(rng.normal(size=10), t) <= 1.0


def test_average_success_counting():
    assert average_success([True] * 5) == 1.0
    assert average_success([True] * 96 + [False] * 4) == 0.96
    rng = np.random.default_rng(0)
    for _ in range(10):
        flags = list(rng.random(10) < 0.7)
        assert average_success(flags) == sum(flags) / 10
    with pytest.raises(MetricError):
        average_success([])


def test_average_success_failure_increment():
    flags = [True, True, False, True]
    base = average_success(flags)
    lower = average_success(flags + [False])
    assert lower < base
    assert lower == pytest.approx(base * 4 / 5)
