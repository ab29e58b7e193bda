"""Episode metrics: success rate, coefficient of determination, SPARC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPARC_MIN_SAMPLES = 8


class MetricError(ValueError):
    pass


def average_success(successes) -> float:
    """Fraction of successful episodes.

    Accepts booleans or objects with a ``success`` attribute (trajectories).
    """
    flags = [bool(getattr(s, "success", s)) for s in successes]
    if not flags:
        raise MetricError("average_success of an empty set")
    return sum(flags) / len(flags)


def r_squared(predicted, truth) -> float:
    """``1 - SS_res / SS_tot`` for one axis."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise MetricError(f"need equal-length 1-d series, got {p.shape} and {t.shape}")
    if len(t) < 2:
        raise MetricError("need at least 2 samples")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("truth has zero variance; R^2 undefined")
    return 1.0 - float(np.sum((p - t) ** 2)) / ss_tot


@dataclass(frozen=True)
class SparcConfig:
    sample_rate: float = 30.0
    padding_level: int = 4
    cutoff_freq: float = 10.0
    amplitude_threshold: float = 0.05

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise MetricError("sample_rate must be positive")
        if not 0 < self.cutoff_freq < self.sample_rate / 2:
            raise MetricError("cutoff_freq must lie in (0, sample_rate / 2)")
        if not 0 < self.amplitude_threshold < 1:
            raise MetricError("amplitude_threshold must lie in (0, 1)")
        if self.padding_level < 0:
            raise MetricError("padding_level must be >= 0")


@dataclass(frozen=True)
class SparcResult:
    value: float
    no_motion: bool = False


def speed_profile(positions, sample_rate: float) -> np.ndarray:
    """Absolute finite-difference speed of a 1-d series."""
    x = np.asarray(positions, dtype=np.float64)
    return np.abs(np.diff(x)) * sample_rate


def sparc_of_speed(speed, cfg: SparcConfig = SparcConfig()) -> SparcResult:
    """Spectral arc length of a speed profile (non-positive; 0 is smoothest).

    The FFT length is ``2 ** (ceil(log2(len)) + padding_level)``.  The band
    runs from the first to the last frequency below ``cutoff_freq`` whose
    max-normalized magnitude reaches ``amplitude_threshold``; frequencies are
    scaled by the band width before measuring the arc length.
    """
    v = np.asarray(speed, dtype=np.float64)
    if v.ndim != 1 or len(v) < 1:
        raise MetricError("speed profile must be a non-empty 1-d array")
    if not np.any(v):
        return SparcResult(0.0, no_motion=True)
    nfft = 1 << (int(np.ceil(np.log2(len(v)))) + cfg.padding_level)
    mag = np.abs(np.fft.rfft(v, nfft))
    mag = mag / mag.max()
    freqs = np.arange(len(mag)) * (cfg.sample_rate / nfft)
    keep = freqs <= cfg.cutoff_freq
    f_sel, m_sel = freqs[keep], mag[keep]
    above = np.flatnonzero(m_sel >= cfg.amplitude_threshold)
    f_sel = f_sel[above[0]:above[-1] + 1]
    m_sel = m_sel[above[0]:above[-1] + 1]
    if len(f_sel) < 2:
        return SparcResult(0.0)
    df = np.diff(f_sel) / (f_sel[-1] - f_sel[0])
    arc = np.sum(np.sqrt(df ** 2 + np.diff(m_sel) ** 2))
    return SparcResult(-float(arc))


def sparc(positions, cfg: SparcConfig = SparcConfig()) -> SparcResult:
    """SPARC of one axis of a position series sampled at ``cfg.sample_rate``."""
    x = np.asarray(positions, dtype=np.float64)
    if x.ndim != 1:
        raise MetricError("sparc expects a 1-d series")
    if len(x) < SPARC_MIN_SAMPLES:
        raise MetricError(f"sparc needs at least {SPARC_MIN_SAMPLES} samples, got {len(x)}")
    return sparc_of_speed(speed_profile(x, cfg.sample_rate), cfg)
