import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from valvetune import cost
from valvetune.cost import (ChirpSpec, DisturbanceSpec, FrequencyResponse, MetricError,
                            SetpointSpec, StepSeriesSpec)
from valvetune.plant import DT, Trajectory


def traj_from(r, y):
    n = len(r)
    z = np.zeros(n)
    return Trajectory(t=np.arange(n) * DT, r=np.asarray(r, float), y=np.asarray(y, float),
                      u=z, d=z, x1=np.asarray(y, float))


def first_order(spec, tau):
    """Output of a unit-gain first-order lag driven by the step series."""
    r = cost.generate_reference(spec)
    y = np.empty_like(r)
    y[0] = r[0]
    a = math.exp(-DT / tau)
    for k in range(1, len(r)):
        y[k] = a * y[k - 1] + (1 - a) * r[k - 1]
    return r, y


class TestHeuristic:
    def test_cost_is_mean_of_sums(self):
        assert cost.heuristic_cost([0.05, 0.1], [0.1, 0.3]) == pytest.approx(0.275)

    @pytest.mark.parametrize("t90,h", [([], []), ([0.1], [0.1, 0.2])])
    def test_shape_errors(self, t90, h):
        with pytest.raises(MetricError):
            cost.heuristic_cost(t90, h)

    def test_perfect_tracking_costs_one_sample(self):
        spec = StepSeriesSpec()
        r = cost.generate_reference(spec)
        res = cost.j_heur(traj_from(r, r), spec)
        assert res.J == pytest.approx(DT)
        assert all(s.reached for s in res.steps)
        assert len(res.steps) == len(spec.levels) - 1

    def test_overshoot_measured_in_step_direction(self):
        hs = StepSeriesSpec().hold_samples
        y = np.concatenate([np.full(hs, 15.0), [15.0, 11.0, 9.2, 9.8], np.full(hs - 4, 10.0)])
        m = cost.step_metrics(y, hs, 2 * hs, 15.0, 10.0)
        assert m.overshoot == pytest.approx(0.8)
        assert m.t90 == pytest.approx(3 * DT)

    def test_unreached_step_costs_the_hold(self):
        hs = 2000
        y = np.full(2 * hs, 10.0)
        m = cost.step_metrics(y, hs, 2 * hs, 10.0, 15.0)
        assert not m.reached
        assert m.t90 == pytest.approx(hs * DT)

    def test_repeated_levels_are_skipped(self):
        spec = StepSeriesSpec(levels=(10.0, 10.0, 15.0))
        r = cost.generate_reference(spec)
        assert len(cost.j_heur(traj_from(r, r), spec).steps) == 1

    def test_short_trajectory_rejected(self):
        spec = StepSeriesSpec()
        with pytest.raises(MetricError):
            cost.j_heur(traj_from(np.zeros(100), np.zeros(100)), spec)

    def test_breakdown_lists_steps(self):
        spec = StepSeriesSpec(levels=(10.0, 15.0))
        r, y = first_order(spec, 0.02)
        b = cost.j_heur(traj_from(r, y), spec).breakdown()
        assert b["unreached_steps"] == 0
        assert b["steps"][0]["to_deg"] == 15.0

    def test_hold_minimum(self):
        with pytest.raises(ValueError):
            StepSeriesSpec(hold=1.0)


class TestFilter:
    @given(st.floats(0.5, 20.0), st.floats(0.0, 6.28))
    def test_passband_sinusoid_unchanged(self, f, phase):
        t = np.arange(4000) * DT
        x = np.sin(2 * np.pi * f * t + phase)
        y = cost.zero_phase_filter(x, 50.0)
        mid = slice(500, 3500)
        np.testing.assert_allclose(y[mid], x[mid], atol=0.01)

    def test_stopband_attenuated(self):
        t = np.arange(4000) * DT
        y = cost.zero_phase_filter(np.sin(2 * np.pi * 200 * t), 50.0)
        assert np.max(np.abs(y[500:3500])) < 1e-3

    def test_rejects_short_or_bad_cutoff(self):
        with pytest.raises(MetricError):
            cost.zero_phase_filter(np.zeros(50), 50.0)
        with pytest.raises(MetricError):
            cost.zero_phase_filter(np.zeros(5000), 600.0)


class TestFrequencyDomain:
    def test_crossing_interpolates(self):
        f = np.array([1.0, 2.0, 3.0])
        S = np.array([0.1, 0.3, 0.7])
        assert cost.crossing_frequency(f, S) == pytest.approx(2.5)

    def test_crossing_fallback(self):
        assert cost.crossing_frequency(np.array([1.0, 2.0]), np.array([0.1, 0.2])) == 28.0

    def test_norm_formula(self):
        fr = FrequencyResponse(freq=np.array([1.0, 2.0, 3.0]), S=np.array([0.2, 0.4, 0.6]),
                               T=np.array([1.0, 1.0, 1.0]))
        res = cost.j_norm(fr)
        assert res.S_inf == pytest.approx(0.6)
        assert res.f_s == pytest.approx(2.5)
        assert res.J == pytest.approx(0.5 * 1.6 + math.exp(-1.25))

    def test_empty_response_rejected(self):
        with pytest.raises(MetricError):
            cost.j_norm(FrequencyResponse(np.empty(0), np.empty(0), np.empty(0)))

    def test_chirp_reference_shape(self):
        spec = ChirpSpec(sweep_time=5.0)
        r = cost.generate_reference(spec)
        assert len(r) == int(round(spec.duration / DT))
        np.testing.assert_allclose(r[:1000], spec.center)
        assert r.max() <= spec.center + spec.amplitude + 1e-12

    def test_log_chirp_instantaneous_frequency(self):
        spec = ChirpSpec(sweep_time=10.0)
        t = np.array([0.0, 10.0])
        dphi = (spec.phase(t + 1e-6) - spec.phase(t)) / 1e-6 / (2 * np.pi)
        np.testing.assert_allclose(dphi, [spec.f_lo, spec.f_hi], rtol=1e-4)

    def test_unexcited_bins_dropped(self):
        spec = ChirpSpec(f_lo=1.0, f_hi=5.0, sweep_time=10.0)
        r = cost.generate_reference(spec)
        fr = cost.estimate_ST(traj_from(r, r), spec, min_rel_energy=0.05)
        assert fr.freq.max() < 10.0
        assert fr.dropped.max() == 28.0
        assert len(fr.dropped) > 0
        np.testing.assert_allclose(fr.T, 1.0, atol=1e-9)


class TestSecondary:
    def test_setpoint_noise(self):
        spec = SetpointSpec(levels=(0.0, 10.0), hold=2.0, settle=1.0)
        rng = np.random.default_rng(0)
        y = np.concatenate([np.zeros(2000), np.full(2000, 10.0)]) + rng.normal(0, 0.1, 4000)
        assert cost.setpoint_noise(traj_from(y, y), spec) == pytest.approx(0.1, rel=0.1)

    def test_disturbance_rejection(self):
        spec = DisturbanceSpec(setpoint=30.0, onset=1.0, duration=2.0)
        t = np.arange(2000) * DT
        y = np.full(2000, 30.0)
        on = t >= 1.0
        y[on] += 2.0 * np.exp(-(t[on] - 1.0) / 0.05)
        t_dist, h = cost.disturbance_rejection(y, spec)
        assert h == pytest.approx(2.0)
        # deviation falls below 0.6 deg at 0.05 * ln(2 / 0.6) after onset
        assert t_dist == pytest.approx(0.05 * math.log(2.0 / 0.6), abs=2 * DT)

    def test_secondary_requires_all_runs(self):
        with pytest.raises(MetricError):
            cost.secondary_metrics({"chirp": None})
