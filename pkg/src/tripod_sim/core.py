"""
Physical parameter types and unit conventions shared by the simulator.

User-facing frequencies are cyclic MHz; everything inside the package runs
in angular units (rad/us) with times in microseconds.  The factor of 2*pi is
applied once, when a configuration is ingested (see ``tripod_sim.protocol``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

TWO_PI = 2.0 * math.pi

# Rb87 D1 natural linewidth and a slow ground-state dephasing, both in MHz.
DEFAULT_GAMMA_MHZ = 5.75
DEFAULT_GAMMA_S_MHZ = 0.01

# Default control ramp: raised cosine of 50 ns.
DEFAULT_RAMP_US = 0.05

# dt * (fastest rate) must stay below this for the explicit stepper.
STABILITY_BOUND = 0.2


class ConfigError(ValueError):
    """Invalid parameters or configuration.

    ``path`` names the offending key (dotted) when the error comes from a
    configuration document.
    """

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class GridValidationError(ConfigError):
    """Time/space grid cannot resolve the dynamics."""


class SimulationInstabilityError(RuntimeError):
    """The integrator produced non-finite or exploding values."""


def mhz_to_angular(f_mhz):
    """Cyclic MHz -> rad/us."""
    return TWO_PI * f_mhz


def angular_to_mhz(w):
    """rad/us -> cyclic MHz."""
    return w / TWO_PI


# ---------------------------------------------------------------------------
# Medium
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TripodMedium:
    """Atomic ensemble in the weak-probe limit.

    The medium length is normalized to 1.  ``collective_coupling`` (gN) drives
    the optical coherence from the signal field, and ``propagation_coupling``
    (kappa) feeds the coherence back into the field; only their product is
    observable.  We keep kappa == gN so that excitation numbers in the atoms
    and photon numbers in the field share the same normalization.
    """

    optical_depth: float
    gamma: float
    gamma_s: float
    collective_coupling: float
    length: float = 1.0

    @property
    def propagation_coupling(self) -> float:
        return self.collective_coupling

    def resonant_absorption_rate(self) -> float:
        """Field amplitude attenuation coefficient per unit length (controls off, on resonance)."""
        return 2.0 * self.propagation_coupling * self.collective_coupling / self.gamma


def _coupling_for_optical_depth(optical_depth: float, gamma: float) -> float:
    # Controls off, steady state of  dP/dt = -(G/2) P + i gN E  gives
    # P = 2i gN E / G, and dE/dz = i kappa P = -(2 kappa gN / G) E.
    # Intensity transmission exp(-4 kappa gN / G) = exp(-OD) with kappa = gN.
    return math.sqrt(optical_depth * gamma / 4.0)


def build_medium(
    optical_depth: float,
    gamma: float = TWO_PI * DEFAULT_GAMMA_MHZ,
    gamma_s: float = TWO_PI * DEFAULT_GAMMA_S_MHZ,
) -> TripodMedium:
    """Construct a medium calibrated to a resonant optical depth.

    Parameters
    ----------
    optical_depth : float
        Control-free resonant intensity attenuation exponent, T = exp(-OD).
    gamma : float
        Excited-state population decay rate (rad/us).
    gamma_s : float
        Spin-coherence dephasing rate (rad/us).
    """
    for name, value in (("optical_depth", optical_depth), ("gamma", gamma), ("gamma_s", gamma_s)):
        if not np.isfinite(value):
            raise ConfigError(f"{name} must be finite, got {value!r}")
    if optical_depth < 0:
        raise ConfigError(f"optical_depth must be >= 0, got {optical_depth}")
    if gamma <= 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    if gamma_s < 0:
        raise ConfigError(f"gamma_s must be >= 0, got {gamma_s}")
    return TripodMedium(
        optical_depth=float(optical_depth),
        gamma=float(gamma),
        gamma_s=float(gamma_s),
        collective_coupling=_coupling_for_optical_depth(optical_depth, gamma),
    )


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SwitchEvent:
    """Control switch: from ``time`` the power ramps to ``level`` over ``ramp``.

    ``level`` is a fraction of the arm's nominal power.  ``phase`` (rad), when
    given, replaces the control's static phase from ``time`` onward.
    """

    time: float
    level: float
    ramp: float = DEFAULT_RAMP_US
    phase: Optional[float] = None


@dataclass(frozen=True)
class ControlField:
    """One control arm of the tripod.

    ``rabi`` is the full Rabi frequency at level 1 (rad/us); the interaction
    Hamiltonian carries rabi/2.  Before the first switch event the arm is off.
    """

    label: str
    rabi: float
    detuning: float = 0.0
    phase: float = 0.0
    switch_events: tuple[SwitchEvent, ...] = ()

    def __post_init__(self):
        if self.label not in ("c1", "c2"):
            raise ConfigError(f"control label must be 'c1' or 'c2', got {self.label!r}")
        if self.rabi < 0 or not np.isfinite(self.rabi):
            raise ConfigError(f"{self.label}: Rabi frequency must be finite and >= 0")
        times = [ev.time for ev in self.switch_events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError(f"{self.label}: switch events must be strictly increasing in time")
        for ev in self.switch_events:
            if ev.level < 0 or ev.ramp < 0:
                raise ConfigError(f"{self.label}: switch level and ramp must be >= 0")
        for ev, nxt in zip(self.switch_events, self.switch_events[1:]):
            if ev.time + ev.ramp > nxt.time + 1e-12:
                raise ConfigError(
                    f"{self.label}: ramp starting at {ev.time} us overlaps the event at {nxt.time} us"
                )

    def envelope(self, t) -> np.ndarray:
        """Real amplitude profile (sqrt of the power fraction) at times ``t``."""
        t = np.asarray(t, dtype=float)
        a = np.zeros_like(t)
        previous = 0.0
        for ev in self.switch_events:
            target = math.sqrt(ev.level)
            if ev.ramp > 0:
                s = np.clip((t - ev.time) / ev.ramp, 0.0, 1.0)
                w = 0.5 * (1.0 - np.cos(math.pi * s))
            else:
                w = 1.0
            a = np.where(t >= ev.time, previous + (target - previous) * w, a)
            previous = target
        return a

    def phase_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        ph = np.full_like(t, self.phase)
        for ev in self.switch_events:
            if ev.phase is not None:
                ph = np.where(t >= ev.time, ev.phase, ph)
        return ph

    def rabi_at(self, t) -> np.ndarray:
        """Complex Rabi frequency Omega(t) including the static phase."""
        return self.rabi * self.envelope(t) * np.exp(1j * self.phase_at(t))

    def peak_rabi(self) -> float:
        levels = [ev.level for ev in self.switch_events]
        return self.rabi * math.sqrt(max(levels, default=0.0))


def _gaussian_sigma(width: float) -> float:
    # width is the intensity FWHM; the field is exp(-(t-tc)^2 / (2 sigma^2))
    return width / (2.0 * math.sqrt(math.log(2.0)))


@dataclass(frozen=True)
class SignalPulse:
    """Gaussian signal envelope, normalized to unit photon flux integral.

    ``width`` is the full width at half maximum of |E|^2 in us.  ``amplitude``
    multiplies the normalized envelope; it is 1 for every physical run and
    only exists to probe linearity.
    """

    width: float
    center: float
    mean_photons: float = 0.5
    detuning: float = 0.0
    amplitude: complex = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigError(f"signal width must be > 0, got {self.width}")
        if not 0 < self.mean_photons <= 1:
            raise ConfigError(f"mean photon number must be in (0, 1], got {self.mean_photons}")

    @property
    def sigma(self) -> float:
        return _gaussian_sigma(self.width)

    def envelope(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = self.sigma
        norm = (math.pi * s * s) ** -0.25
        return self.amplitude * norm * np.exp(-((t - self.center) ** 2) / (2.0 * s * s))


@dataclass(frozen=True)
class SimulationGrid:
    """Uniform time grid plus the number of spatial nodes on z in [0, 1]."""

    t_end: float
    dt: float
    n_z: int = 64
    t_start: float = 0.0

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_z)


def validate_grid(grid: SimulationGrid, max_rate: float | dict[str, float]) -> None:
    """Raise ``GridValidationError`` unless the grid resolves ``max_rate``.

    ``max_rate`` may be a single rate (rad/us) or a mapping of rate names to
    values, in which case the error names the violating one.
    """
    if grid.n_z < 2:
        raise GridValidationError(f"n_z must be >= 2, got {grid.n_z}", path="grid.n_z")
    if not grid.dt > 0:
        raise GridValidationError(f"dt must be > 0, got {grid.dt}", path="grid.dt_us")
    span = grid.t_end - grid.t_start
    if span <= 0:
        raise GridValidationError("t_end must be after t_start", path="grid.t_end_us")
    count = span / grid.dt
    if abs(count - round(count)) > 1e-6 * max(1.0, count):
        raise GridValidationError(
            f"time span {span} us is not an integer multiple of dt = {grid.dt} us", path="grid.dt_us"
        )
    rates = max_rate if isinstance(max_rate, dict) else {"max rate": max_rate}
    name, rate = max(rates.items(), key=lambda kv: abs(kv[1]))
    product = grid.dt * abs(rate)
    if not product < STABILITY_BOUND:
        raise GridValidationError(
            f"dt * {name} = {grid.dt} us * {abs(rate):.6g} rad/us = {product:.3g} "
            f"exceeds the stability bound {STABILITY_BOUND}",
            path="grid.dt_us",
        )


def sequence_rates(medium: TripodMedium, controls: Sequence[ControlField], signal_detuning: float = 0.0) -> dict[str, float]:
    """Characteristic rates (rad/us) that the time step has to resolve."""
    rates = {"Gamma": medium.gamma, "signal detuning": abs(signal_detuning)}
    for c in controls:
        rates[f"|Omega_{c.label}|"] = c.peak_rabi()
        rates[f"detuning {c.label}"] = abs(c.detuning)
    return rates


def photon_integral(samples: np.ndarray, dt: float) -> float:
    """Trapezoid integral of |E|^2 over a uniform grid."""
    return float(trapezoid(np.abs(samples) ** 2, dx=dt))
