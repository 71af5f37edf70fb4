import math

import numpy as np
import pytest

from modpend.classical import PhaseState
from modpend.errors import ConfigurationError, ParameterDomainError
from modpend.floquet import SpatialGrid, coherent_state_for
from modpend.protocols import (NACC_PRESET_COARSE, NACC_PRESET_FINE,
                               CriteriaReport, ObservableTrace,
                               QuasimomentumEnsemble, RotationScan,
                               evaluate_criteria, phase_rotation_measurement,
                               route1_oscillations, route2_drift_run,
                               route2_extract, route3_oscillations,
                               tunneling_amplitude)
from modpend.units import ModelParams

P25 = ModelParams(0.25, 0.4, 0.2)
P24 = ModelParams(0.24, 0.4, 0.2)
P_STAR = 1.29724
# frozen exact splitting at (0.25, 0.4, 0.2), beta = 0: tunneling period
# hbar / delta = 260 drive periods
DELTA_25 = 7.691e-4


class TestEnsemble:
    def test_factories(self):
        assert len(QuasimomentumEnsemble.single(0.1)) == 1
        assert len(QuasimomentumEnsemble.grid(-0.01, 0.01, 7)) == 7
        e = QuasimomentumEnsemble.uniform(-0.02, 0.02, 9, seed=3)
        assert len(e) == 9
        assert all(-0.02 <= b <= 0.02 for b in e.betas)

    def test_uniform_deterministic(self):
        a = QuasimomentumEnsemble.uniform(-0.1, 0.1, 5, seed=2)
        b = QuasimomentumEnsemble.uniform(-0.1, 0.1, 5, seed=2)
        assert a.betas == b.betas

    def test_zone_enforced(self):
        with pytest.raises(ParameterDomainError):
            QuasimomentumEnsemble((0.7,))
        with pytest.raises(ParameterDomainError):
            QuasimomentumEnsemble.uniform(0.4, 0.6, 3)


@pytest.fixture(scope="module")
def single_trace():
    # island-matched isotropic width puts ~94% of the weight on the
    # tunneling doublet, giving near-full-contrast oscillations
    return route1_oscillations(P25, QuasimomentumEnsemble.single(0.0),
                               n_periods=1040,
                               width_x=math.sqrt(P25.hbar_eff / 2.0),
                               grid=SpatialGrid(128),
                               steps_per_period=128)


class TestRoute1:

    def test_starts_on_upper_island(self, single_trace):
        assert single_trace.values[0] == pytest.approx(P_STAR, rel=0.05)

    def test_oscillation_period_matches_splitting(self, single_trace):
        # full tunneling cycle lasts hbar_eff / delta drive periods
        expected = P25.hbar_eff / DELTA_25
        assert single_trace.dominant_period() == pytest.approx(expected,
                                                               rel=0.1)

    def test_crosses_to_negative_momentum(self, single_trace):
        # the residual non-doublet weight stays near +p*, so the minimum
        # sits above -p* but well below zero
        assert single_trace.values.min() < -0.6 * P_STAR

    def test_quasimomentum_averaging_collapses(self, single_trace):
        period = P25.hbar_eff / DELTA_25
        amp_single = tunneling_amplitude(single_trace, period)
        avg = route1_oscillations(
            P25, QuasimomentumEnsemble.uniform(-0.01, 0.01, 10, seed=0),
            n_periods=1040, width_x=math.sqrt(P25.hbar_eff / 2.0),
            grid=SpatialGrid(128), steps_per_period=128)
        amp_avg = tunneling_amplitude(avg, period)
        assert amp_avg < 0.3 * amp_single

    def test_members_shape(self, single_trace):
        assert single_trace.members.shape == (1, 1040)
        assert np.allclose(single_trace.members[0], single_trace.values)


class TestTunnelingAmplitude:
    def test_pure_tone(self):
        t = np.arange(2000, dtype=float)
        period = 250.0
        trace = ObservableTrace(times=t,
                                values=1.3 * np.cos(2 * math.pi * t / period))
        assert tunneling_amplitude(trace, period) == pytest.approx(1.3,
                                                                   rel=0.02)

    def test_too_short_raises(self):
        trace = ObservableTrace(times=np.arange(10, dtype=float),
                                values=np.zeros(10))
        with pytest.raises(ConfigurationError):
            tunneling_amplitude(trace, 1e6)


def _synthetic_drift_trace(n_acc, beta0, t_cross, p_star=P_STAR,
                           width=None, final=None):
    """Sigmoid drop centered on t_cross, mimicking a clean LZ drift run."""
    t = np.linspace(0.0, n_acc, 400)
    if width is None:
        width = 0.005 * n_acc / (2 * beta0)
    if final is None:
        final = -0.9 * p_star
    start = 0.95 * p_star
    vals = start + (final - start) / (1.0 + np.exp(-(t - t_cross) / width))
    return ObservableTrace(times=t, values=vals,
                           meta={"n_acc": n_acc, "beta0": beta0,
                                 "t_cross_periods": t_cross})


class TestCriteria:
    def test_clean_crossing_accepted(self):
        trace = _synthetic_drift_trace(2000, 0.05, 1000.0)
        rep = evaluate_criteria(trace, P_STAR)
        assert rep.final_value_ok and rep.crossing_ok
        assert rep.curvature_ok and rep.amplitude_ok
        assert rep.accepted

    def test_no_drop_rejected(self):
        t = np.linspace(0, 2000, 400)
        trace = ObservableTrace(times=t,
                                values=np.full(400, 0.9 * P_STAR),
                                meta={"n_acc": 2000, "beta0": 0.05,
                                      "t_cross_periods": 1000.0})
        rep = evaluate_criteria(trace, P_STAR)
        assert not rep.final_value_ok
        assert not rep.amplitude_ok
        assert not rep.accepted

    def test_displaced_drop_rejected(self):
        # transition far from the nominal crossing: the fastest drop sits
        # outside the allowed window around t_cross
        trace = _synthetic_drift_trace(2000, 0.05, 1000.0)
        shifted = _synthetic_drift_trace(2000, 0.05, 400.0)
        shifted.meta["t_cross_periods"] = 1000.0
        rep = evaluate_criteria(shifted, P_STAR)
        assert evaluate_criteria(trace, P_STAR).accepted
        assert not rep.crossing_ok or not rep.curvature_ok
        assert not rep.accepted

    def test_report_details(self):
        rep = evaluate_criteria(_synthetic_drift_trace(2000, 0.05, 1000.0),
                                P_STAR)
        for key in ("final_value", "crossing_fraction", "curvature",
                    "drop_offset", "variation"):
            assert key in rep.details
        assert rep.thresholds["kappa1"] == 0.5


class TestRoute2:
    def test_drift_run_structure(self):
        tr = route2_drift_run(P24, 100,
                              ensemble=QuasimomentumEnsemble.grid(0.04, 0.06, 3),
                              grid=SpatialGrid(64), steps_per_period=64)
        assert tr.members.shape[0] == 3
        assert tr.times[-1] == pytest.approx(100.0)
        assert tr.meta["t_cross_periods"] == pytest.approx(
            100 * 0.05 / (2 * 0.05), rel=0.05)
        assert "p_final_two_band" in tr.meta
        assert abs(tr.meta["p_final_two_band"]) <= P_STAR + 1e-9
        assert len(tr.meta["projection_weights"]) == 3

    def test_short_schedule_rejected(self):
        with pytest.raises(ConfigurationError):
            route2_extract(P24, n_acc_schedule=(100, 200, 400))

    def test_presets_are_sorted_schedules(self):
        for preset in (NACC_PRESET_COARSE, NACC_PRESET_FINE):
            assert len(preset) >= 4
            assert list(preset) == sorted(preset)

    @pytest.mark.slow
    def test_extract_pipeline(self):
        fit, report, points, trace, sample = route2_extract(
            P24, n_acc_schedule=(50, 100, 200, 510),
            ensemble=QuasimomentumEnsemble.grid(0.04, 0.06, 3),
            grid=SpatialGrid(64), steps_per_period=64)
        assert len(points) == 4
        assert points[0][0] == 50.0
        assert points[-1][0] == 510.0
        assert math.isfinite(fit.extracted_delta)
        assert isinstance(report, CriteriaReport)
        assert sample.method == "lz"


class TestRoute3:
    def test_antisymmetry(self):
        params = ModelParams(0.29, 0.29, 0.16)
        ens = QuasimomentumEnsemble.single(0.0)
        left = route3_oscillations(params, ens, 150,
                                   center=PhaseState(-1.2, 0.0),
                                   grid=SpatialGrid(128),
                                   steps_per_period=128)
        right = route3_oscillations(params, ens, 150,
                                    center=PhaseState(1.2, 0.0),
                                    grid=SpatialGrid(128),
                                    steps_per_period=128)
        assert np.max(np.abs(left.values + right.values)) < 1e-6

    def test_times_in_double_periods(self):
        params = ModelParams(0.29, 0.29, 0.16)
        tr = route3_oscillations(params, QuasimomentumEnsemble.single(0.0),
                                 20, grid=SpatialGrid(128),
                                 steps_per_period=128)
        assert np.allclose(tr.times, 2.0 * np.arange(20))

    def test_starts_at_center(self):
        params = ModelParams(0.29, 0.29, 0.16)
        tr = route3_oscillations(params, QuasimomentumEnsemble.single(0.0),
                                 20, center=PhaseState(1.2, 0.0),
                                 grid=SpatialGrid(128), steps_per_period=128)
        assert tr.values[0] == pytest.approx(1.2, abs=0.1)


class TestRotationReadout:
    def test_periodic_in_shift(self):
        params = ModelParams(0.29, 0.29, 0.16)
        g = SpatialGrid(128)
        psi = coherent_state_for(PhaseState(1.2, 0.0), 0.4, params, g)
        scan = phase_rotation_measurement(psi, params,
                                          [0.3, 0.3 + 2 * math.pi])
        pops = scan.zero_velocity_population
        assert pops[0] == pytest.approx(pops[1], abs=1e-10)

    def test_populations_are_probabilities(self):
        params = ModelParams(0.29, 0.29, 0.16)
        g = SpatialGrid(128)
        psi = coherent_state_for(PhaseState(1.2, 0.0), 0.4, params, g)
        scan = phase_rotation_measurement(psi, params,
                                          np.linspace(-2.0, 2.0, 9))
        assert all(0.0 <= p <= 1.0 for p in scan.zero_velocity_population)
        # the shift moves the packet relative to the well bottom, so the
        # zero-velocity population must actually vary
        assert np.ptp(scan.zero_velocity_population) > 0.05

    def test_static_lattice_required(self):
        g = SpatialGrid(64)
        params = ModelParams(0.0, 0.0, 0.2)
        psi = coherent_state_for(PhaseState(0.0, 0.0), 0.4, params, g)
        with pytest.raises(ParameterDomainError):
            phase_rotation_measurement(psi, params, [0.0])

    def test_scan_validation(self):
        with pytest.raises(ConfigurationError):
            RotationScan(phase_shifts=(0.0,),
                         zero_velocity_population=(1.5,))
