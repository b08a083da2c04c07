"""
Analytic two-component polariton model for a tripod memory.

With the controls fixed (or off), the stored excitation lives in a
two-dimensional space spanned by the dark polariton ``psi`` and the
signal-decoupled combination ``psi_perp``.  Opposite control detunings
rotate one into the other, which is what produces temporal beating and the
storage-time dependent interference.  Everything here is closed form and is
used as an oracle for the full Maxwell-Bloch solver.

Angles are in radians, rates in rad/us and times in us.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class UndefinedAngleError(ValueError):
    """Mixing angles requested for an all-zero set of couplings."""


@dataclass(frozen=True)
class MixingAngles:
    """Photon/spin angle ``theta`` and spin-wave split angle ``phi``.

    ``tan(theta) = gN / |Omega|`` and ``tan(phi) = |Omega_c1| / |Omega_c2|``.
    """

    theta: float
    phi: float

    def __post_init__(self):
        for name in ("theta", "phi"):
            value = getattr(self, name)
            if not (0.0 <= value <= math.pi / 2) or not math.isfinite(value):
                raise ValueError(f"{name} must lie in [0, pi/2], got {value!r}")


def mixing_angles(rabi_c1: complex, rabi_c2: complex, coupling: float) -> MixingAngles:
    """Mixing angles for given control Rabi frequencies and collective coupling.

    Only magnitudes enter; control phases are tracked separately.

    Raises
    ------
    UndefinedAngleError
        If both controls and the coupling vanish.
    """
    a1, a2, g = abs(rabi_c1), abs(rabi_c2), abs(coupling)
    if a1 == 0 and a2 == 0 and g == 0:
        raise UndefinedAngleError("mixing angles are undefined when all couplings are zero")
    omega = math.hypot(a1, a2)
    # phi is irrelevant without control light; pick the balanced split so the
    # result is still a valid MixingAngles.
    phi = math.atan2(a1, a2) if omega > 0 else math.pi / 4
    return MixingAngles(theta=math.atan2(g, omega), phi=phi)


@dataclass(frozen=True)
class PolaritonState:
    """Amplitudes on the (psi, psi_perp) basis plus the basis definition."""

    psi: complex
    psi_perp: complex
    angles: MixingAngles
    control_phases: tuple[float, float] = (0.0, 0.0)

    @property
    def norm_squared(self) -> float:
        return abs(self.psi) ** 2 + abs(self.psi_perp) ** 2

    def spin_amplitudes(self) -> tuple[complex, complex]:
        """Spin coherences (sigma_bc1, sigma_bc2) of a fully stored state (theta = pi/2)."""
        return _spins_from_polaritons(self.psi, self.psi_perp, self.angles.phi, self.control_phases)


def _basis_phases(phases: tuple[float, float]) -> tuple[complex, complex]:
    p1, p2 = phases
    return complex(np.exp(-1j * p1)), complex(np.exp(-1j * p2))


def compose_dark(
    signal: complex,
    sigma_bc1: complex,
    sigma_bc2: complex,
    angles: MixingAngles,
    phases: tuple[float, float] = (0.0, 0.0),
) -> tuple[complex, complex]:
    """Project field and spin-wave amplitudes onto (psi, psi_perp).

    ``psi = cos(theta) E - sin(theta) (sin(phi) e^{-i p1} s1 + cos(phi) e^{-i p2} s2)``
    and ``psi_perp = cos(phi) e^{-i p1} s1 - sin(phi) e^{-i p2} s2``, where
    ``p1, p2`` are the static control phases.  Each spin wave keeps the phase
    factor of its own control in both combinations, which makes the two basis
    vectors orthogonal for any phases.
    """
    th, ph = angles.theta, angles.phi
    e1, e2 = _basis_phases(phases)
    psi = math.cos(th) * signal - math.sin(th) * (math.sin(ph) * e1 * sigma_bc1 + math.cos(ph) * e2 * sigma_bc2)
    psi_perp = math.cos(ph) * e1 * sigma_bc1 - math.sin(ph) * e2 * sigma_bc2
    return complex(psi), complex(psi_perp)


def dark_basis_vectors(angles: MixingAngles, phases: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Rows are the (E, sigma_bc1, sigma_bc2) coefficient vectors of psi and psi_perp."""
    th, ph = angles.theta, angles.phi
    e1, e2 = _basis_phases(phases)
    return np.array(
        [
            [math.cos(th), -math.sin(th) * math.sin(ph) * e1, -math.sin(th) * math.cos(ph) * e2],
            [0.0, math.cos(ph) * e1, -math.sin(ph) * e2],
        ],
        dtype=complex,
    )


def _spins_from_polaritons(psi, psi_perp, phi, phases):
    # Inverse of compose_dark at theta = pi/2 (orthogonal 2x2 rotation).
    e1, e2 = _basis_phases(phases)
    s, c = math.sin(phi), math.cos(phi)
    s1 = (-s * psi + c * psi_perp) / e1
    s2 = (-c * psi - s * psi_perp) / e2
    return complex(s1), complex(s2)


def generator(delta_s: float, delta_c: float, phi: float) -> np.ndarray:
    """Hermitian 2x2 generator H with d/dt (psi, psi_perp) = -i H (psi, psi_perp)."""
    c2, s2 = math.cos(2 * phi), math.sin(2 * phi)
    return np.array(
        [[delta_s - delta_c * c2, delta_c * s2], [delta_c * s2, delta_s + delta_c * c2]],
        dtype=complex,
    )


def propagator(delta_s: float, delta_c: float, phi: float, duration: float) -> np.ndarray:
    """exp(-i H duration) in closed form.

    H = delta_s I + delta_c M with M = [[-cos2phi, sin2phi], [sin2phi, cos2phi]]
    and M^2 = I, so the exponential is a phase times a rotation.
    """
    c2, s2 = math.cos(2 * phi), math.sin(2 * phi)
    m = np.array([[-c2, s2], [s2, c2]], dtype=complex)
    a = delta_c * duration
    return np.exp(-1j * delta_s * duration) * (math.cos(a) * np.eye(2) - 1j * math.sin(a) * m)


def evolve(state: PolaritonState, delta_s: float, delta_c: float, duration: float) -> PolaritonState:
    """Free evolution of a stored excitation under stationary controls.

    Parameters
    ----------
    state : PolaritonState
    delta_s : float
        Signal (one-photon) detuning, rad/us.
    delta_c : float
        Half the difference of the two control detunings, rad/us; the arms sit
        at +delta_c and -delta_c.
    duration : float
        Evolution time in us.  Negative durations run the unitary backwards.
    """
    u = propagator(delta_s, delta_c, state.angles.phi, duration)
    psi, perp = u @ np.array([state.psi, state.psi_perp], dtype=complex)
    return replace(state, psi=complex(psi), psi_perp=complex(perp))


def phase_ledger(phase_c1_t1: float, phase_c2_t2: float, phase_c1_0: float = 0.0, phase_c2_0: float = 0.0) -> float:
    """Relative time-bin phase from the control phases at write and read-out.

    Returns ``phase_c1_t1 - phase_c2_t2 + phase_c1_0 - phase_c2_0``.  Free
    evolution between the bins is not included here; use :func:`evolve`.
    """
    return phase_c1_t1 - phase_c2_t2 + phase_c1_0 - phase_c2_0


@dataclass(frozen=True)
class TimeBinState:
    """Single photon split across an early (t1) and a late (t2) time bin."""

    amp_t1: complex
    amp_t2: complex
    t1: float
    t2: float
    delta_phi_c: float

    @property
    def probabilities(self) -> tuple[float, float]:
        return abs(self.amp_t1) ** 2, abs(self.amp_t2) ** 2

    @property
    def ratio(self) -> float:
        """Late-to-early intensity ratio (the splitting proportion)."""
        p1, p2 = self.probabilities
        return math.inf if p1 == 0 else p2 / p1


def time_bin_state(phi: float, delta_phi_c: float, t1: float, t2: float) -> TimeBinState:
    """Time-bin amplitudes ``(sin phi, cos phi e^{i delta_phi_c})``.

    Raises
    ------
    ValueError
        If ``t1 >= t2``.
    """
    if not t1 < t2:
        raise ValueError(f"time bins must be ordered, got t1={t1} >= t2={t2}")
    return TimeBinState(
        amp_t1=complex(math.sin(phi)),
        amp_t2=complex(math.cos(phi) * np.exp(1j * delta_phi_c)),
        t1=float(t1),
        t2=float(t2),
        delta_phi_c=float(delta_phi_c),
    )


def split_angle_for_power_ratio(power_ratio: float) -> float:
    """phi for a control power ratio P_c2/P_c1 (Rabi frequency scales as sqrt(P))."""
    if power_ratio < 0:
        raise ValueError("power ratio must be >= 0")
    return math.atan2(1.0, math.sqrt(power_ratio))


def retrieval_fraction(
    storage_time: float,
    delta_c: float,
    delta_s: float = 0.0,
    phi: float = math.pi / 4,
    phase_offset: float = 0.0,
) -> float:
    """Fraction of a stored dark polariton that is in phase at read-out.

    The excitation starts as pure ``psi``, evolves for ``storage_time``, and
    the second spin wave then picks up ``phase_offset`` relative to the first
    (an apparatus phase applied on retrieval).  The return value is the
    weight on the retrieval dark state.  For ``phi = pi/4`` and
    ``delta_s = 0`` it equals ``cos^2(delta_c T - phase_offset / 2)``.
    """
    if storage_time < 0:
        raise ValueError(f"storage time must be >= 0, got {storage_time}")
    angles = MixingAngles(theta=math.pi / 2, phi=phi)
    state = evolve(PolaritonState(1.0 + 0j, 0j, angles), delta_s, delta_c, storage_time)
    s1, s2 = state.spin_amplitudes()
    s2 *= np.exp(1j * phase_offset)
    psi_out = -(math.sin(phi) * s1 + math.cos(phi) * s2)
    return float(min(1.0, abs(psi_out) ** 2))
