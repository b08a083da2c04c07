import math
import warnings

import numpy as np
import pytest

from tripod_sim.core import (
    ControlField,
    GridValidationError,
    SignalPulse,
    SimulationGrid,
    SimulationInstabilityError,
    SwitchEvent,
    build_medium,
)
from tripod_sim.maxwell_bloch import (
    group_delay,
    optical_depth_from_medium,
    propagate,
    simulate,
    simulate_many,
    steady_transmission,
    storage_efficiency,
)
from tripod_sim.protocol import PulseSequence, splitting_experiment

TWO_PI = 2 * math.pi


def _constant_controls_sequence(rabi1, rabi2=0.0, width=0.5, center=2.0, dc1=0.0, dc2=0.0, amplitude=1.0):
    on = (SwitchEvent(0.0, 1.0, 0.0),)
    return PulseSequence(
        signal=SignalPulse(width=width, center=center, amplitude=amplitude),
        c1=ControlField("c1", rabi1, detuning=dc1, switch_events=on if rabi1 else ()),
        c2=ControlField("c2", rabi2, detuning=dc2, switch_events=on if rabi2 else ()),
    )


def _fourier_oracle(medium, seq, times):
    """Exit field of a linear, time-invariant medium via the transfer function.

    A component exp(+i nu t) sees the denominator
    D = Gamma/2 + i nu + sum_j |W_j|^2/4 / (gs + i (nu + dc_j)) for a resonant probe.
    """
    e_in = seq.signal.envelope(times)
    n = len(times)
    nu = TWO_PI * np.fft.fftfreq(n, d=times[1] - times[0])
    D = 0.5 * medium.gamma + 1j * nu
    for c in seq.controls:
        if c.rabi:
            D = D + 0.25 * c.rabi**2 / (medium.gamma_s + 1j * (nu + c.detuning))
    transfer = np.exp(-medium.collective_coupling**2 / D)
    return np.fft.ifft(np.fft.fft(e_in) * transfer)


class TestAgainstFourierOracle:
    @pytest.mark.parametrize(
        "rabi1,rabi2,dc1,dc2",
        [
            (0.0, 0.0, 0.0, 0.0),
            (TWO_PI * 3.0, 0.0, 0.0, 0.0),
            (TWO_PI * 2.0, TWO_PI * 2.0, TWO_PI * 1.0, -TWO_PI * 1.0),
        ],
    )
    def test_exit_field(self, rabi1, rabi2, dc1, dc2):
        medium = build_medium(1.3)
        seq = _constant_controls_sequence(rabi1, rabi2, dc1=dc1, dc2=dc2)
        grid = SimulationGrid(t_end=6.0, dt=0.002, n_z=64)
        rec = simulate(medium, seq, grid)
        oracle = _fourier_oracle(medium, seq, grid.times)
        peak = np.max(np.abs(oracle))
        assert np.max(np.abs(rec.exit_envelope - oracle)) < 2e-3 * peak


class TestSteadyState:
    @pytest.mark.parametrize("od", [0.5, 1.3, 2.6])
    def test_recovers_od(self, od):
        assert optical_depth_from_medium(build_medium(od)) == pytest.approx(od, rel=1e-12)

    def test_transparency_on_two_photon_resonance(self):
        m = build_medium(2.0, gamma_s=0.0)
        assert abs(steady_transmission(m, TWO_PI * 2, TWO_PI * 1)) ** 2 > 1 - 1e-12

    def test_dephasing_costs_transmission(self):
        m = build_medium(2.0, gamma_s=TWO_PI * 0.1)
        assert abs(steady_transmission(m, TWO_PI * 2, 0.0)) < 1.0

    def test_detuned_control_breaks_transparency(self):
        m = build_medium(2.0, gamma_s=0.0)
        t = steady_transmission(m, TWO_PI * 2, 0.0, signal_detuning=0.0, detuning_c1=TWO_PI * 3)
        assert abs(t) < 0.9


class TestBookkeeping:
    def test_split_run(self, split_record):
        assert split_record.bookkeeping_total == pytest.approx(1.0, abs=0.01)
        assert not split_record.warnings

    def test_stored_fraction_is_spinwave_norm(self, split_config):
        # After the switch-off and before any retrieval, the excitation sits in the spin waves.
        c = split_config
        seq = c.sequence
        rec = simulate(c.medium, seq, c.grid, snapshot_stride=25)
        k = int(np.argmin(np.abs(rec.snapshot_times - (seq.switch_off_time + 0.3))))
        n1, n2 = rec.spinwave_norms(k)
        assert n1 > 0 and n2 > 0
        assert n1 == pytest.approx(n2, rel=0.05)


class TestLinearity:
    def test_amplitude_scaling(self):
        medium = build_medium(1.3)
        grid = SimulationGrid(t_end=4.0, dt=0.002, n_z=16)
        a = simulate(medium, _constant_controls_sequence(TWO_PI * 3.0), grid)
        b = simulate(medium, _constant_controls_sequence(TWO_PI * 3.0, amplitude=2.5 - 1.0j), grid)
        np.testing.assert_allclose(b.exit_envelope, (2.5 - 1.0j) * a.exit_envelope, rtol=1e-12, atol=1e-15)
        assert b.transmitted_fraction == pytest.approx(a.transmitted_fraction, rel=1e-12)

    def test_batch_equals_individual(self, split_config):
        c = split_config
        other = splitting_experiment(p_c2=200.0)
        batch = simulate_many(c.medium, [c.sequence, other.sequence], c.grid)
        single = simulate(c.medium, other.sequence, c.grid)
        np.testing.assert_allclose(batch[1].exit_envelope, single.exit_envelope, rtol=1e-12, atol=1e-15)


class TestConvergence:
    def test_retrieved_efficiency(self):
        effs = []
        for dt, n_z in ((0.002, 32), (0.001, 64)):
            c = splitting_experiment(dt_us=dt, n_z=n_z)
            rec = simulate(c.medium, c.sequence, c.grid)
            start = rec.sequence.retrieval_start
            effs.append(storage_efficiency(rec, (start, c.grid.t_end)))
        assert effs[0] == pytest.approx(effs[1], rel=0.01)


class TestGroupDelay:
    def test_small_bandwidth_value(self):
        m = build_medium(1.3)
        rabi = TWO_PI * 6.0
        assert group_delay(m, rabi) == pytest.approx(m.optical_depth * m.gamma / rabi**2, rel=0.02)

    def test_warns_outside_window(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            group_delay(build_medium(1.3), TWO_PI * 1.0, pulse_width=0.2)
        assert any("EIT window" in str(w.message) for w in caught)


class TestErrors:
    def test_unstable_step_raises(self):
        medium = build_medium(1.3)
        grid = SimulationGrid(t_end=5.0, dt=0.25, n_z=8)  # dt * Gamma/2 = 4.5, beyond RK4 stability
        th = 0.5 * grid.dt * np.arange(2 * grid.n_steps + 1)
        sig = SignalPulse(width=0.5, center=1.0).envelope(th)[None, :].astype(complex)
        zero = np.zeros_like(sig)
        with pytest.raises(SimulationInstabilityError):
            propagate(medium, grid, sig, zero, zero, 0.0, 0.0, 0.0)

    def test_coarse_step_rejected(self, split_config):
        c = split_config
        with pytest.raises(GridValidationError):
            simulate(c.medium, c.sequence, SimulationGrid(c.grid.t_end, 0.004, c.grid.n_z))

    def test_pulse_outside_grid(self):
        seq = _constant_controls_sequence(TWO_PI * 3.0, center=3.9)
        with pytest.raises(GridValidationError) as info:
            simulate(build_medium(1.3), seq, SimulationGrid(4.0, 0.002, 8))
        assert info.value.path == "signal.center_us"

    def test_weak_probe_diagnostic(self):
        medium = build_medium(1.3)
        grid = SimulationGrid(t_end=4.0, dt=0.002, n_z=8)
        seq = _constant_controls_sequence(TWO_PI * 3.0)
        th = 0.5 * grid.dt * np.arange(2 * grid.n_steps + 1)
        sig = seq.signal.envelope(th)[None, :].astype(complex)
        rabi = seq.c1.rabi_at(th)[None, :]
        zero = np.zeros_like(rabi)
        few = propagate(medium, grid, sig, rabi, zero, 0.0, 0.0, 0.0, atom_number=1.0)[0]
        many = propagate(medium, grid, sig, rabi, zero, 0.0, 0.0, 0.0, atom_number=1e8)[0]
        assert few["peak_coherence"] > 0.3 > many["peak_coherence"]

    def test_storage_efficiency_window(self, split_record):
        with pytest.raises(ValueError):
            storage_efficiency(split_record, (2.0, 2.0))
