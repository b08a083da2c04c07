"""
Weak-probe Maxwell-Bloch solver for the tripod medium.

Co-moving frame, z normalized to [0, 1]::

    dP/dt  = -(G/2 + i ds) P + i gN E + i (W1/2) S1 + i (W2/2) S2
    dSj/dt = -(gs + i (ds - dcj)) Sj + i (Wj*/2) P
    dE/dz  = i kappa P

P is the optical coherence, S1/S2 the two spin waves, Wj the complex Rabi
frequency of control j (static phase included).  Time is stepped with
classical RK4 on every z node at once; at each stage the field is rebuilt
from the boundary value by cumulative trapezoid quadrature in z, which keeps
the scheme second order in space.  Runs sharing a grid are stacked along a
leading batch axis.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .core import (
    ConfigError,
    ControlField,
    GridValidationError,
    SignalPulse,
    SimulationGrid,
    SimulationInstabilityError,
    SwitchEvent,
    TripodMedium,
    photon_integral,
    sequence_rates,
    validate_grid,
)

if TYPE_CHECKING:
    from .protocol import PulseSequence

logger = logging.getLogger(__name__)

# Detector time resolution; the exit envelope must be sampled at least this finely.
DETECTOR_RESOLUTION_US = 0.002

WEAK_PROBE_LIMIT = 0.3

# Default number of atoms, only used for the weak-probe diagnostic.
DEFAULT_ATOM_NUMBER = 1e8


@dataclass
class FieldRecord:
    """Output of one simulated sequence.

    ``exit_envelope`` and ``input_envelope`` are sampled on ``grid.times``.
    Spin-wave snapshots are stored every ``snapshot_stride`` steps.
    The three fractions are normalized to the input photon number.
    """

    grid: SimulationGrid
    times: np.ndarray
    input_envelope: np.ndarray
    exit_envelope: np.ndarray
    z: np.ndarray
    snapshot_times: np.ndarray
    spinwave_c1: np.ndarray
    spinwave_c2: np.ndarray
    transmitted_fraction: float
    stored_fraction: float
    scattered_fraction: float
    input_photons: float
    mean_photons: float = 1.0
    sequence: Optional["PulseSequence"] = None
    warnings: list[str] = field(default_factory=list)

    @property
    def bookkeeping_total(self) -> float:
        return self.transmitted_fraction + self.stored_fraction + self.scattered_fraction

    @property
    def exit_intensity(self) -> np.ndarray:
        return np.abs(self.exit_envelope) ** 2

    def spinwave_norms(self, index: int = -1) -> tuple[float, float]:
        """Integrated |S1|^2 and |S2|^2 over z for one snapshot."""
        n1 = trapezoid(np.abs(self.spinwave_c1[index]) ** 2, self.z)
        n2 = trapezoid(np.abs(self.spinwave_c2[index]) ** 2, self.z)
        return float(n1), float(n2)

    def summary(self) -> dict:
        return {
            "transmitted_fraction": self.transmitted_fraction,
            "stored_fraction": self.stored_fraction,
            "scattered_fraction": self.scattered_fraction,
            "bookkeeping_total": self.bookkeeping_total,
            "input_photons": self.input_photons,
            "mean_photons": self.mean_photons,
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# Integrator
# ---------------------------------------------------------------------------


def _cumulative_field(P: np.ndarray, e_in: np.ndarray, step: complex) -> np.ndarray:
    inc = step * (P[:, 1:] + P[:, :-1])
    E = np.empty_like(P)
    E[:, 0] = e_in
    np.cumsum(inc, axis=1, out=E[:, 1:])
    E[:, 1:] += e_in[:, None]
    return E


def propagate(
    medium: TripodMedium,
    grid: SimulationGrid,
    signal_in: np.ndarray,
    rabi_c1: np.ndarray,
    rabi_c2: np.ndarray,
    signal_detuning: np.ndarray,
    detuning_c1: np.ndarray,
    detuning_c2: np.ndarray,
    snapshot_stride: int = 10,
    atom_number: float = DEFAULT_ATOM_NUMBER,
    mean_photons: Optional[np.ndarray] = None,
) -> list[dict]:
    """Integrate a batch of runs that share medium and grid.

    ``signal_in``, ``rabi_c1`` and ``rabi_c2`` have shape (batch, 2 * n_steps + 1):
    samples on the half-step grid t_start + k * dt / 2.  Detunings have shape
    (batch,).  Returns one dict of raw arrays per run.
    """
    n = grid.n_steps
    dt = grid.dt
    signal_in = np.atleast_2d(np.asarray(signal_in, dtype=complex))
    rabi_c1 = np.atleast_2d(np.asarray(rabi_c1, dtype=complex))
    rabi_c2 = np.atleast_2d(np.asarray(rabi_c2, dtype=complex))
    batch = signal_in.shape[0]
    expected = (batch, 2 * n + 1)
    for name, arr in (("signal_in", signal_in), ("rabi_c1", rabi_c1), ("rabi_c2", rabi_c2)):
        if arr.shape != expected:
            raise ValueError(f"{name} has shape {arr.shape}, expected {expected}")
    ds = np.broadcast_to(np.asarray(signal_detuning, dtype=float), (batch,))[:, None]
    dc1 = np.broadcast_to(np.asarray(detuning_c1, dtype=float), (batch,))[:, None]
    dc2 = np.broadcast_to(np.asarray(detuning_c2, dtype=float), (batch,))[:, None]
    if mean_photons is None:
        mean_photons = np.ones(batch)

    z = grid.z
    dz = z[1] - z[0]
    g = medium.collective_coupling
    kappa = medium.propagation_coupling
    z_step = 0.5j * kappa * dz
    decay_P = -(0.5 * medium.gamma + 1j * ds)
    decay_S1 = -(medium.gamma_s + 1j * (ds - dc1))
    decay_S2 = -(medium.gamma_s + 1j * (ds - dc2))
    half_c1 = 0.5j * rabi_c1
    half_c2 = 0.5j * rabi_c2
    half_c1_conj = 0.5j * np.conj(rabi_c1)
    half_c2_conj = 0.5j * np.conj(rabi_c2)

    def rhs(k, P, S1, S2):
        E = _cumulative_field(P, signal_in[:, k], z_step)
        dP = decay_P * P + (1j * g) * E + half_c1[:, k, None] * S1 + half_c2[:, k, None] * S2
        dS1 = decay_S1 * S1 + half_c1_conj[:, k, None] * P
        dS2 = decay_S2 * S2 + half_c2_conj[:, k, None] * P
        return dP, dS1, dS2

    shape = (batch, grid.n_z)
    P = np.zeros(shape, dtype=complex)
    S1 = np.zeros(shape, dtype=complex)
    S2 = np.zeros(shape, dtype=complex)

    exit_env = np.empty((batch, n + 1), dtype=complex)
    loss_rate = np.empty((batch, n + 1))
    peak_sq = np.zeros(batch)
    snap_idx = list(range(0, n + 1, snapshot_stride))
    if snap_idx[-1] != n:
        snap_idx.append(n)
    snaps_1 = np.empty((batch, len(snap_idx), grid.n_z), dtype=complex)
    snaps_2 = np.empty_like(snaps_1)
    snap_pos = 0

    def record(i):
        nonlocal snap_pos
        E = _cumulative_field(P, signal_in[:, 2 * i], z_step)
        exit_env[:, i] = E[:, -1]
        aP = np.abs(P) ** 2
        aS = np.abs(S1) ** 2 + np.abs(S2) ** 2
        loss_rate[:, i] = medium.gamma * trapezoid(aP, z, axis=1) + 2.0 * medium.gamma_s * trapezoid(aS, z, axis=1)
        np.maximum(peak_sq, np.max(np.maximum(aP, np.maximum(np.abs(S1), np.abs(S2)) ** 2), axis=1), out=peak_sq)
        if snap_pos < len(snap_idx) and snap_idx[snap_pos] == i:
            snaps_1[:, snap_pos] = S1
            snaps_2[:, snap_pos] = S2
            snap_pos += 1

    input_photons = trapezoid(np.abs(signal_in[:, ::2]) ** 2, dx=dt, axis=1)
    blowup = 10.0 * np.maximum(input_photons, 1e-300) + 1.0

    record(0)
    h2 = 0.5 * dt
    h6 = dt / 6.0
    for i in range(n):
        k0 = 2 * i
        a1, b1, c1 = rhs(k0, P, S1, S2)
        a2, b2, c2 = rhs(k0 + 1, P + h2 * a1, S1 + h2 * b1, S2 + h2 * c1)
        a3, b3, c3 = rhs(k0 + 1, P + h2 * a2, S1 + h2 * b2, S2 + h2 * c2)
        a4, b4, c4 = rhs(k0 + 2, P + dt * a3, S1 + dt * b3, S2 + dt * c3)
        P = P + h6 * (a1 + 2.0 * (a2 + a3) + a4)
        S1 = S1 + h6 * (b1 + 2.0 * (b2 + b3) + b4)
        S2 = S2 + h6 * (c1 + 2.0 * (c2 + c3) + c4)
        record(i + 1)
        if (i + 1) % 200 == 0 or i + 1 == n:
            norm = trapezoid(np.abs(P) ** 2 + np.abs(S1) ** 2 + np.abs(S2) ** 2, z, axis=1)
            if not np.all(np.isfinite(norm)) or np.any(norm > blowup):
                t = grid.t_start + (i + 1) * dt
                raise SimulationInstabilityError(
                    f"atomic excitation diverged at t = {t:.4f} us; reduce dt (currently {dt} us)"
                )

    transmitted = trapezoid(np.abs(exit_env) ** 2, dx=dt, axis=1)
    scattered = trapezoid(loss_rate, dx=dt, axis=1)
    stored = trapezoid(np.abs(P) ** 2 + np.abs(S1) ** 2 + np.abs(S2) ** 2, z, axis=1)
    peak_coherence = np.sqrt(np.asarray(mean_photons) * peak_sq / atom_number)

    out = []
    for b in range(batch):
        scale = input_photons[b] if input_photons[b] > 0 else 1.0
        out.append(
            dict(
                exit_envelope=exit_env[b],
                snapshots_c1=snaps_1[b],
                snapshots_c2=snaps_2[b],
                snapshot_times=grid.t_start + dt * np.asarray(snap_idx, dtype=float),
                input_photons=float(input_photons[b]),
                transmitted_fraction=float(transmitted[b] / scale),
                scattered_fraction=float(scattered[b] / scale),
                stored_fraction=float(stored[b] / scale),
                peak_coherence=float(peak_coherence[b]),
            )
        )
    return out


def _half_step_times(grid: SimulationGrid) -> np.ndarray:
    return grid.t_start + 0.5 * grid.dt * np.arange(2 * grid.n_steps + 1)


def _check_signal_normalization(signal: SignalPulse, grid: SimulationGrid) -> None:
    samples = signal.envelope(grid.times) / signal.amplitude if signal.amplitude != 0 else None
    if samples is None:
        return
    total = photon_integral(samples, grid.dt)
    if abs(total - 1.0) > 1e-6:
        raise GridValidationError(
            f"signal pulse is not contained in the time grid (integrated |E|^2 = {total:.8f}, "
            "expected 1 within 1e-6); move the pulse center or extend the grid",
            path="signal.center_us",
        )


def simulate_many(
    medium: TripodMedium,
    sequences: Sequence["PulseSequence"],
    grid: SimulationGrid,
    snapshot_stride: int = 10,
) -> list[FieldRecord]:
    """Simulate several sequences on one grid as a single batched integration."""
    if not sequences:
        raise ConfigError("no sequences to simulate")
    if grid.dt > DETECTOR_RESOLUTION_US * (1 + 1e-9):
        raise GridValidationError(
            f"dt = {grid.dt} us is coarser than the 2 ns detector resolution", path="grid.dt_us"
        )
    for seq in sequences:
        rates = sequence_rates(medium, seq.controls, seq.signal.detuning)
        validate_grid(grid, rates)
        _check_signal_normalization(seq.signal, grid)

    th = _half_step_times(grid)
    signal_in = np.stack([seq.signal.envelope(th) for seq in sequences]).astype(complex)
    rabi_c1 = np.stack([seq.controls[0].rabi_at(th) for seq in sequences])
    rabi_c2 = np.stack([seq.controls[1].rabi_at(th) for seq in sequences])
    raw = propagate(
        medium,
        grid,
        signal_in,
        rabi_c1,
        rabi_c2,
        signal_detuning=np.array([s.signal.detuning for s in sequences]),
        detuning_c1=np.array([s.controls[0].detuning for s in sequences]),
        detuning_c2=np.array([s.controls[1].detuning for s in sequences]),
        snapshot_stride=snapshot_stride,
        mean_photons=np.array([s.signal.mean_photons for s in sequences]),
    )

    records = []
    times = grid.times
    for seq, r, sig in zip(sequences, raw, signal_in):
        notes = []
        if r["peak_coherence"] > WEAK_PROBE_LIMIT:
            msg = f"weak-probe approximation violated: peak coherence {r['peak_coherence']:.3g}"
            notes.append(msg)
            logger.warning(msg)
        total = r["transmitted_fraction"] + r["stored_fraction"] + r["scattered_fraction"]
        if r["input_photons"] > 0 and abs(total - 1.0) > 0.01:
            notes.append(f"photon bookkeeping off by {abs(total - 1.0):.3%}")
        records.append(
            FieldRecord(
                grid=grid,
                times=times,
                input_envelope=sig[::2],
                exit_envelope=r["exit_envelope"],
                z=grid.z,
                snapshot_times=r["snapshot_times"],
                spinwave_c1=r["snapshots_c1"],
                spinwave_c2=r["snapshots_c2"],
                transmitted_fraction=r["transmitted_fraction"],
                stored_fraction=r["stored_fraction"],
                scattered_fraction=r["scattered_fraction"],
                input_photons=r["input_photons"],
                mean_photons=seq.signal.mean_photons,
                sequence=seq,
                warnings=notes,
            )
        )
    return records


def simulate(medium: TripodMedium, sequence: "PulseSequence", grid: SimulationGrid, snapshot_stride: int = 10) -> FieldRecord:
    """Run one pulse sequence through the medium."""
    return simulate_many(medium, [sequence], grid, snapshot_stride=snapshot_stride)[0]


# ---------------------------------------------------------------------------
# Steady state and derived observables
# ---------------------------------------------------------------------------


def _spin_admittance(rabi: float, gamma_s: float, two_photon: float) -> complex:
    # |W|^2/4 / (gs + i (ds - dc)); infinite on an undamped two-photon resonance
    rabi_sq = abs(rabi) ** 2
    if rabi_sq == 0:
        return 0.0
    denom = complex(gamma_s, two_photon)
    if denom == 0:
        return complex(math.inf)
    return 0.25 * rabi_sq / denom


def steady_transmission(
    medium: TripodMedium,
    rabi_c1: float,
    rabi_c2: float,
    signal_detuning: float = 0.0,
    detuning_c1: float = 0.0,
    detuning_c2: float = 0.0,
) -> complex:
    """Exit/input amplitude ratio for a monochromatic probe under constant controls."""
    y1 = _spin_admittance(rabi_c1, medium.gamma_s, signal_detuning - detuning_c1)
    y2 = _spin_admittance(rabi_c2, medium.gamma_s, signal_detuning - detuning_c2)
    if math.isinf(abs(y1)) or math.isinf(abs(y2)):
        return complex(1.0)
    D = complex(0.5 * medium.gamma, signal_detuning) + y1 + y2
    # P = i gN E / D  and  dE/dz = i kappa P  =>  E(1) = E(0) exp(-kappa gN / D)
    return complex(np.exp(-medium.propagation_coupling * medium.collective_coupling * medium.length / D))


def optical_depth_from_medium(medium: TripodMedium) -> float:
    """Recover OD from the resonant, control-free steady-state transmission."""
    t = steady_transmission(medium, 0.0, 0.0)
    return float(-math.log(abs(t) ** 2))


def _peak_time(times: np.ndarray, values: np.ndarray) -> float:
    k = int(np.argmax(values))
    if 0 < k < len(values) - 1:
        y0, y1, y2 = values[k - 1], values[k], values[k + 1]
        denom = y0 - 2 * y1 + y2
        if denom != 0:
            return float(times[k] + 0.5 * (y0 - y2) / denom * (times[1] - times[0]))
    return float(times[k])


def group_delay(
    medium: TripodMedium,
    rabi: float,
    pulse_width: float = 1.0,
    dt: float = DETECTOR_RESOLUTION_US,
    n_z: int = 64,
) -> float:
    """Peak delay (us) of a long pulse under a constant resonant control of Rabi frequency ``rabi``."""
    from .protocol import PulseSequence

    if not rabi > 0:
        raise ConfigError(f"control Rabi frequency must be > 0, got {rabi}")
    if medium.optical_depth > 0:
        window = rabi**2 / (medium.gamma * math.sqrt(medium.optical_depth))
        bandwidth = 2.0 * math.sqrt(math.log(2.0)) * 2.0 / pulse_width
        if bandwidth > window:
            warnings.warn(
                f"pulse bandwidth {bandwidth:.3g} rad/us exceeds the EIT window {window:.3g} rad/us",
                stacklevel=2,
            )
    delay_guess = medium.optical_depth * medium.gamma / rabi**2
    center = 3.0 * pulse_width
    t_end = center + 3.0 * pulse_width + 2.0 * delay_guess
    t_end = dt * math.ceil(t_end / dt)
    grid = SimulationGrid(t_end=t_end, dt=dt, n_z=n_z)
    on = (SwitchEvent(0.0, 1.0, 0.0),)
    seq = PulseSequence(
        signal=SignalPulse(width=pulse_width, center=center),
        c1=ControlField("c1", rabi, switch_events=on),
        c2=ControlField("c2", 0.0),
    )
    rec = simulate(medium, seq, grid, snapshot_stride=grid.n_steps)
    t = rec.times
    return _peak_time(t, rec.exit_intensity) - _peak_time(t, np.abs(rec.input_envelope) ** 2)


def storage_efficiency(record: FieldRecord, retrieval_window: tuple[float, float]) -> float:
    """Photons leaving in ``retrieval_window`` divided by photons sent in."""
    t0, t1 = retrieval_window
    if not t1 > t0:
        raise ValueError(f"empty retrieval window [{t0}, {t1})")
    t = record.times
    mask = (t >= t0) & (t <= t1)
    if mask.sum() < 2:
        raise ValueError(f"retrieval window [{t0}, {t1}) contains no grid samples")
    out = trapezoid(record.exit_intensity[mask], t[mask])
    return float(out / record.input_photons) if record.input_photons > 0 else 0.0
