"""
Observables extracted from simulated records: binned photon counts,
splitting proportion, beating period and parameter-sweep curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.signal import find_peaks

from .maxwell_bloch import DETECTOR_RESOLUTION_US, FieldRecord

DEFAULT_PROMINENCE = 0.05
RETRIEVAL_WINDOW_US = 1.0
INITIAL_WINDOW_US = 0.2

# Window edges that land within this distance of a bin edge snap to it, so
# that decimal window bounds do not depend on floating point noise.
_EDGE_TOL = 1e-9


class InsufficientOscillationError(ValueError):
    """Too few qualifying maxima to estimate a period."""


@dataclass(frozen=True)
class Waveform:
    """Expected photon counts in uniform time bins.

    ``times`` holds the left edge of each bin (us), ``counts`` the expected
    number of detected photons in that bin per experimental shot.
    """

    times: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.counts, dtype=float)
        if t.ndim != 1 or t.shape != c.shape:
            raise ValueError("times and counts must be 1-D arrays of equal length")
        if t.size < 2:
            raise ValueError("a waveform needs at least two bins")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        steps = np.diff(t)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
            raise ValueError("bins must be uniform and increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "counts", c)

    @property
    def bin_width(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1] + self.bin_width)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def scaled(self, factor: float) -> "Waveform":
        return Waveform(self.times, self.counts * factor)

    @classmethod
    def from_record(cls, record: FieldRecord, bin_width: float = DETECTOR_RESOLUTION_US) -> "Waveform":
        """Bin the exit intensity of ``record`` into detector bins.

        Samples are weighted by the time step and by the mean photon number
        of the input pulse, then summed in groups of ``bin_width / dt``.  If
        the simulation step is coarser than ``bin_width`` the step is used.
        """
        dt = record.grid.dt
        per_bin = max(1, int(round(bin_width / dt)))
        if per_bin > 1 and abs(per_bin * dt - bin_width) > 1e-9:
            raise ValueError(f"bin width {bin_width} us is not a multiple of the time step {dt} us")
        samples = record.mean_photons * record.exit_intensity * dt
        n_bins = samples.size // per_bin
        counts = samples[: n_bins * per_bin].reshape(n_bins, per_bin).sum(axis=1)
        times = record.times[: n_bins * per_bin : per_bin]
        return cls(times, counts)


def _bin_index(w: Waveform, t: float) -> int:
    x = (t - w.times[0]) / w.bin_width
    nearest = round(x)
    if abs(x - nearest) < _EDGE_TOL * max(1.0, abs(x)):
        return int(nearest)
    return int(math.ceil(x))


def window_counts(w: Waveform, t0: float, t1: float) -> float:
    """Sum of counts in bins whose left edge lies in ``[t0, t1)``.

    Raises
    ------
    ValueError
        If ``t1 < t0`` or the window reaches outside the waveform.
    """
    lo, hi = w.span
    tol = _EDGE_TOL * max(1.0, abs(hi))
    if t1 < t0:
        raise ValueError(f"window end {t1} precedes its start {t0}")
    if t0 < lo - tol or t1 > hi + tol:
        raise ValueError(f"window [{t0}, {t1}) lies outside the waveform span [{lo}, {hi})")
    i0, i1 = _bin_index(w, t0), _bin_index(w, t1)
    return math.fsum(w.counts[i0:i1])


@dataclass(frozen=True)
class SplitResult:
    """Photon counts retrieved by each control and their ratio ``eta = n_c2 / n_c1``."""

    n_c1: float
    n_c2: float
    eta: float
    window_c1: tuple[float, float]
    window_c2: tuple[float, float]


def splitting_ratio(
    w: Waveform,
    window_c1: tuple[float, float],
    window_c2: tuple[float, float],
) -> SplitResult:
    """Splitting proportion from two disjoint retrieval windows."""
    (a0, a1), (b0, b1) = window_c1, window_c2
    if a0 < b1 and b0 < a1:
        raise ValueError(f"retrieval windows {window_c1} and {window_c2} overlap")
    n1 = window_counts(w, a0, a1)
    n2 = window_counts(w, b0, b1)
    if n1 <= 0:
        raise ValueError("no counts in the c1 retrieval window; eta is undefined")
    return SplitResult(n_c1=n1, n_c2=n2, eta=n2 / n1, window_c1=(a0, a1), window_c2=(b0, b1))


def split_windows(record: FieldRecord, length: float = RETRIEVAL_WINDOW_US) -> tuple[tuple[float, float], tuple[float, float]]:
    """Default retrieval windows ``[t, t + length)`` for each arm of a splitting run.

    A window is cut short where the other arm's retrieval begins or where the
    record ends, so the two windows never overlap.
    """
    if record.sequence is None:
        raise ValueError("record carries no pulse sequence")
    times = record.sequence.retrieval_times
    if "c1" not in times or "c2" not in times:
        raise ValueError("both controls must perform a retrieval")
    end = record.grid.t_end
    windows = {}
    for arm, other in (("c1", "c2"), ("c2", "c1")):
        start = times[arm]
        stop = min(start + length, end)
        if times[other] > start:
            stop = min(stop, times[other])
        windows[arm] = (start, stop)
    return windows["c1"], windows["c2"]


def _refine_peak(x: np.ndarray, y: np.ndarray, i: int) -> float:
    if i == 0 or i == len(y) - 1:
        return float(x[i])
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = y0 - 2 * y1 + y2
    if denom == 0:
        return float(x[i])
    shift = 0.5 * (y0 - y2) / denom
    return float(x[i] + shift * (x[i + 1] - x[i]))


def peak_positions(x: np.ndarray, y: np.ndarray, prominence: float = DEFAULT_PROMINENCE) -> np.ndarray:
    """Interior maxima of ``y`` with prominence above ``prominence * max(y)``,
    located by three-point quadratic interpolation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size < 3 or not np.any(y > 0):
        return np.empty(0)
    idx, _ = find_peaks(y, prominence=prominence * float(np.max(y)))
    return np.array([_refine_peak(x, y, i) for i in idx])


@dataclass(frozen=True)
class PeriodEstimate:
    period: float
    n_maxima: int
    maxima: tuple[float, ...]


def _period_from_maxima(x, y, prominence, what, skip=0) -> PeriodEstimate:
    maxima = peak_positions(x, y, prominence)[skip:]
    if maxima.size < 2:
        raise InsufficientOscillationError(
            f"found {maxima.size} {what} maxima above {prominence:.0%} prominence"
            + (f" after skipping {skip}" if skip else "")
            + "; need at least 2"
        )
    return PeriodEstimate(period=float(np.mean(np.diff(maxima))), n_maxima=int(maxima.size), maxima=tuple(maxima))


def _retrieval_slice(w: Waveform, retrieval_start: float, length: Optional[float]):
    i0 = _bin_index(w, retrieval_start)
    i1 = len(w.counts) if length is None else _bin_index(w, retrieval_start + length)
    return w.times[i0:i1] + 0.5 * w.bin_width, w.counts[i0:i1]


def beating_period(
    w: Waveform,
    retrieval_start: float,
    prominence: float = DEFAULT_PROMINENCE,
    length: Optional[float] = None,
    skip_onset: int = 1,
) -> PeriodEstimate:
    """Period of the temporal beating in the retrieved pulse.

    Maxima after ``retrieval_start`` (optionally within ``length`` us) whose
    prominence exceeds ``prominence`` times the largest count are located to
    sub-bin precision; the period is their mean spacing.

    The first ``skip_onset`` maxima are dropped.  At switch-on the part of
    the excitation that is already in phase leaves at the read-out rate, so
    the first lobe sits wherever the initial phase puts it; only the later
    lobes are spaced by the beating period.

    Raises
    ------
    InsufficientOscillationError
        Fewer than two qualifying maxima remain.
    """
    t, c = _retrieval_slice(w, retrieval_start, length)
    return _period_from_maxima(t, c, prominence, "beating", skip=skip_onset)


@dataclass(frozen=True)
class SpectralPeak:
    period: float
    frequency: float
    bin_width: float


def spectral_period(w: Waveform, retrieval_start: float, length: Optional[float] = None) -> SpectralPeak:
    """Dominant oscillation of the retrieved pulse from its discrete spectrum.

    A linear trend is removed first so that the slowly decaying envelope does
    not dominate the low-frequency bins.  ``bin_width`` is the frequency
    resolution in cycles per us.
    """
    _, c = _retrieval_slice(w, retrieval_start, length)
    n = c.size
    if n < 4:
        raise InsufficientOscillationError("retrieval window too short for a spectrum")
    x = np.arange(n)
    detrended = c - np.polyval(np.polyfit(x, c, 1), x)
    power = np.abs(np.fft.rfft(detrended)) ** 2
    power[0] = 0.0
    k = int(np.argmax(power))
    if k == 0 or power[k] == 0:
        raise InsufficientOscillationError("no oscillating component in the retrieval window")
    df = 1.0 / (n * w.bin_width)
    return SpectralPeak(period=1.0 / (k * df), frequency=k * df, bin_width=df)


@dataclass(frozen=True)
class WindowMetric:
    """Counts in ``[start + offset, start + offset + length)``.

    ``start`` is the retrieval onset of each record.
    """

    length: float = INITIAL_WINDOW_US
    offset: float = 0.0
    bin_width: float = DETECTOR_RESOLUTION_US

    def __call__(self, record: FieldRecord) -> float:
        if record.sequence is None or record.sequence.retrieval_start is None:
            raise ValueError("record has no retrieval onset to anchor the window")
        start = record.sequence.retrieval_start + self.offset
        return window_counts(Waveform.from_record(record, self.bin_width), start, start + self.length)


Metric = Union[WindowMetric, Callable[[FieldRecord], float]]


def sweep_curve(results: Sequence[tuple[float, FieldRecord]], metric: Metric = WindowMetric()) -> list[tuple[float, float]]:
    """Apply ``metric`` to every record, keeping input order."""
    if len(results) == 0:
        raise ValueError("sweep_curve needs at least one result")
    return [(float(value), float(metric(record))) for value, record in results]


def curve_period(curve: Sequence[tuple[float, float]], prominence: float = DEFAULT_PROMINENCE) -> PeriodEstimate:
    """Oscillation period of a sweep curve from the spacing of its maxima."""
    x, y = (np.asarray(a, dtype=float) for a in zip(*curve))
    order = np.argsort(x)
    return _period_from_maxima(x[order], y[order], prominence, "curve")


def curve_argmax(curve: Sequence[tuple[float, float]]) -> float:
    """Parameter value with the largest metric."""
    values, metrics = zip(*curve)
    return float(values[int(np.argmax(metrics))])


def poisson_sample(w: Waveform, seed: int, shots: int = 1) -> Waveform:
    """Draw detected counts accumulated over ``shots`` repetitions."""
    rng = np.random.default_rng(seed)
    return Waveform(w.times, rng.poisson(w.counts * shots).astype(float))
