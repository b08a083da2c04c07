import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripod_sim.core import ConfigError, GridValidationError
from tripod_sim.protocol import (
    SweepError,
    SweepSpec,
    apply_parameter,
    detuning_experiment,
    parse_config,
    parse_document,
    parse_sequence,
    run_sweep,
    serialize_config,
    splitting_experiment,
)


@pytest.fixture
def doc():
    return splitting_experiment().to_document()


def _numbers_close(a, b, rel=4 * np.finfo(float).eps):
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(_numbers_close(a[k], b[k], rel) for k in a)
    if isinstance(a, list):
        return len(a) == len(b) and all(_numbers_close(x, y, rel) for x, y in zip(a, b))
    if isinstance(a, float) or isinstance(b, float):
        return math.isclose(a, b, rel_tol=rel, abs_tol=1e-300)
    return a == b


class TestParsing:
    def test_calibration_and_units(self, doc):
        doc["calibration"]["rabi_mhz_at_100uw"] = 2.0
        doc["control_c2"]["power_uw"] = 400.0
        doc["control_c2"]["detuning_mhz"] = -1.5
        cfg = parse_document(doc)
        assert cfg.sequence.c1.rabi == pytest.approx(2 * math.pi * 2.0)
        assert cfg.sequence.c2.rabi == pytest.approx(2 * math.pi * 4.0)
        assert cfg.sequence.c2.detuning == pytest.approx(-2 * math.pi * 1.5)
        assert cfg.medium.gamma == pytest.approx(2 * math.pi * 5.75)

    def test_calibration_section_optional(self, doc):
        del doc["calibration"]
        assert parse_document(doc).sequence.c1.rabi == pytest.approx(2 * math.pi * 1.5)

    @pytest.mark.parametrize(
        "mutate,path",
        [
            (lambda d: d["medium"].pop("od"), "medium.od"),
            (lambda d: d["signal"].update(extra=1), "signal.extra"),
            (lambda d: d["control_c1"]["events"][0].update(level=-1), "control_c1.events[0].level"),
            (lambda d: d["grid"].update(n_z=1), "grid.n_z"),
            (lambda d: d.update(schema_version=2), "schema_version"),
            (lambda d: d["signal"].update(mean_photons=2.0), "signal.mean_photons"),
        ],
    )
    def test_schema_errors_name_key(self, doc, mutate, path):
        mutate(doc)
        with pytest.raises(ConfigError) as info:
            parse_document(doc)
        assert info.value.path == path
        assert path in str(info.value)

    def test_non_monotone_events(self, doc):
        ev = doc["control_c1"]["events"]
        ev[0]["t_us"], ev[1]["t_us"] = ev[1]["t_us"], ev[0]["t_us"]
        with pytest.raises(ConfigError, match="control_c1.events"):
            parse_document(doc)

    def test_retrieval_before_switch_off(self, doc):
        # c1 comes back before c2 has been switched off
        doc["control_c2"]["events"] = [{"t_us": 0.0, "level": 1.0, "ramp_us": 0.0}, {"t_us": 2.0, "level": 0.0, "ramp_us": 0.05}]
        doc["control_c1"]["events"] = [
            {"t_us": 0.0, "level": 1.0, "ramp_us": 0.0},
            {"t_us": 1.0, "level": 0.0, "ramp_us": 0.05},
            {"t_us": 1.5, "level": 1.0, "ramp_us": 0.05},
        ]
        with pytest.raises(ConfigError, match="retrieval precedes switch-off"):
            parse_document(doc)

    def test_pulse_after_switch_off(self, doc):
        doc["signal"]["center_us"] = 1.2
        with pytest.raises(ConfigError) as info:
            parse_document(doc)
        assert info.value.path == "signal.center_us"

    def test_invalid_json(self):
        with pytest.raises(ConfigError):
            parse_config("{not json")

    def test_parse_sequence(self, doc):
        seq = parse_sequence(json.dumps(doc))
        assert seq.switch_off_time == pytest.approx(1.0)

    def test_grid_check_is_separate(self, doc):
        doc["grid"]["dt_us"] = 0.01
        cfg = parse_document(doc)
        with pytest.raises(GridValidationError, match="stability bound"):
            cfg.validate()


class TestTimeline:
    def test_splitting_c1_first(self):
        seq = splitting_experiment(0.5, 1.5).sequence
        assert seq.switch_off_time == pytest.approx(1.0)
        assert seq.retrieval_times == pytest.approx({"c1": 1.5, "c2": 2.5})
        assert seq.storage_time == pytest.approx(0.5)

    def test_splitting_c2_first(self):
        seq = splitting_experiment(0.5, 1.5, order="c2-first").sequence
        assert seq.retrieval_times == pytest.approx({"c2": 1.5, "c1": 2.5})

    def test_power_sets_split_angle(self):
        seq = splitting_experiment(p_c1=100.0, p_c2=200.0).sequence
        assert (seq.c2.rabi / seq.c1.rabi) ** 2 == pytest.approx(2.0)

    def test_detuning_sequence(self):
        cfg = detuning_experiment(2.0, 0.4, 0.78 * math.pi)
        seq = cfg.sequence
        assert seq.c1.detuning == pytest.approx(2 * math.pi * 2.0)
        assert seq.c2.detuning == pytest.approx(-2 * math.pi * 2.0)
        assert seq.storage_time == pytest.approx(0.4)
        start = seq.retrieval_start
        assert seq.c2.phase_at(start - 0.01) == 0.0
        assert seq.c2.phase_at(start + 0.01) == pytest.approx(0.78 * math.pi)
        assert seq.c1.phase_at(start + 0.01) == 0.0

    def test_event_kinds(self):
        kinds = [(e.control, e.kind) for e in splitting_experiment().sequence.events]
        assert ("c1", "retrieval") in kinds and ("c2", "retrieval") in kinds
        assert kinds.count(("c1", "switch-off")) + kinds.count(("c2", "switch-off")) >= 1

    @pytest.mark.parametrize("bad", [dict(t1=1.5, t2=0.5), dict(order="sideways"), dict(p_c2=-1.0)])
    def test_splitting_errors(self, bad):
        with pytest.raises(ConfigError):
            splitting_experiment(**bad)

    def test_detuning_storage_must_be_positive(self):
        with pytest.raises(ConfigError):
            detuning_experiment(1.0, 0.0)


finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def documents(draw):
    cal = draw(st.floats(0.5, 8.0, **finite))
    width = draw(st.floats(0.05, 0.5, **finite))
    center = draw(st.floats(0.3, 1.0, **finite))
    off = center + draw(st.floats(0.01, 0.5, **finite))
    t1 = draw(st.floats(0.05, 1.0, **finite))
    t2 = t1 + draw(st.floats(0.1, 1.0, **finite))
    cfg = splitting_experiment(
        t1,
        t2,
        draw(st.floats(1.0, 500.0, **finite)),
        draw(st.floats(0.0, 500.0, **finite)),
        draw(st.sampled_from(["c1-first", "c2-first"])),
        od=draw(st.floats(0.0, 5.0, **finite)),
        gamma_s_mhz=draw(st.floats(0.0, 0.1, **finite)),
        rabi_mhz_at_100uw=cal,
        width_us=width,
        center_us=center,
        switch_off_us=off,
        ramp_us=draw(st.floats(0.0, 0.05, **finite)),
        mean_photons=draw(st.floats(0.01, 1.0, **finite)),
        n_z=draw(st.integers(2, 128)),
    )
    doc = cfg.to_document()
    doc["control_c1"]["phase_rad"] = draw(st.floats(-math.pi, math.pi, **finite))
    doc["control_c2"]["detuning_mhz"] = draw(st.floats(-5.0, 5.0, **finite))
    return doc


class TestRoundTrip:
    @settings(max_examples=100)
    @given(documents())
    def test_parse_serialize_parse(self, doc):
        first = parse_document(doc)
        text = serialize_config(first)
        second = parse_config(text)
        assert _numbers_close(first.to_document(), second.to_document())
        assert second.sequence.retrieval_times == pytest.approx(first.sequence.retrieval_times)
        # canonical encoding is a fixed point after one pass
        assert serialize_config(parse_config(text)) == serialize_config(parse_config(serialize_config(second)))

    def test_builder_document_is_valid(self):
        cfg = detuning_experiment(1.0, 1.0, 0.5)
        again = parse_document(cfg.to_document())
        assert again.sequence.retrieval_start == pytest.approx(cfg.sequence.retrieval_start)


class TestSweep:
    def test_apply_parameter(self, doc):
        d = apply_parameter(doc, "detuning_mhz", 0.7)
        assert (d["control_c1"]["detuning_mhz"], d["control_c2"]["detuning_mhz"]) == (0.7, -0.7)
        d = apply_parameter(doc, "power_ratio", 4.0)
        assert d["control_c2"]["power_uw"] == pytest.approx(4 * doc["control_c1"]["power_uw"])
        assert doc == splitting_experiment().to_document()  # input untouched

    def test_storage_shift_moves_retrievals(self):
        base = detuning_experiment(1.0, 0.5)
        cfg = parse_document(apply_parameter(base.to_document(), "storage_us", 1.25))
        assert cfg.sequence.storage_time == pytest.approx(1.25)
        assert cfg.grid.t_end == pytest.approx(base.grid.t_end + 0.75)
        assert cfg.sequence.switch_off_time == pytest.approx(base.sequence.switch_off_time)

    def test_order_preserved_and_matches_single_runs(self, monkeypatch):
        from tripod_sim.maxwell_bloch import simulate

        base = detuning_experiment(0.0, 0.3, retrieval_us=0.3)
        values = (0.6, 0.0, 0.3)
        monkeypatch.setenv("TRIPOD_SIM_THREADS", "2")
        out = run_sweep(SweepSpec("detuning_mhz", values, base), max_batch=2)
        assert [v for v, _ in out] == list(values)
        for v, rec in out:
            cfg = parse_document(apply_parameter(base.to_document(), "detuning_mhz", v))
            ref = simulate(cfg.medium, cfg.sequence, cfg.grid)
            np.testing.assert_allclose(rec.exit_envelope, ref.exit_envelope, rtol=1e-12, atol=1e-15)

    def test_storage_sweep_mixes_grids(self):
        base = detuning_experiment(1.0, 0.3, retrieval_us=0.3)
        out = run_sweep(SweepSpec("storage_us", (0.5, 0.3), base))
        assert [rec.sequence.storage_time for _, rec in out] == pytest.approx([0.5, 0.3])

    def test_bad_point_reports_value(self):
        base = splitting_experiment()
        with pytest.raises(SweepError) as info:
            run_sweep(SweepSpec("power_ratio", (1.0, -2.0), base))
        assert info.value.value == -2.0

    @pytest.mark.parametrize("values", [(), (float("nan"),)])
    def test_empty_or_nan(self, values):
        with pytest.raises(ConfigError):
            SweepSpec("detuning_mhz", values, splitting_experiment())

    def test_unknown_parameter(self):
        with pytest.raises(ConfigError):
            SweepSpec("od", (1.0,), splitting_experiment())
