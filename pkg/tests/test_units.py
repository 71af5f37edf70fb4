import json
import math

import pytest

from modpend.errors import ParameterDomainError
from modpend.units import (HBAR, H_PLANCK, LoadingEstimate, ModelParams,
                           PhysicalSetup, derive_dimensionless,
                           harmonic_loading_estimate, lattice_depth_from_laser,
                           model_params_from_json, model_params_to_json,
                           omega_for_hbar_eff, quasimomentum_width,
                           reduce_beta, setup_from_descriptor)

RB87_MASS = 1.44316e-25          # kg
SPACING = 532e-9                 # m, 1064 nm lattice


def rb87_setup(omega=2 * math.pi * 50e3, depth_j=1e-29):
    return PhysicalSetup(atom_mass=RB87_MASS, lattice_spacing=SPACING,
                         modulation_angular_frequency=omega,
                         lattice_depth=depth_j, laser_power=1.0,
                         beam_waist=150e-6, velocity_width=1e-4)


class TestReduceBeta:
    def test_identity_inside_zone(self):
        for b in (-0.5, -0.2, 0.0, 0.3, 0.49999):
            assert reduce_beta(b) == pytest.approx(b)

    def test_periodicity(self):
        for b in (-0.3, 0.0, 0.25, 0.45):
            for shift in (-2, -1, 1, 3):
                assert reduce_beta(b + shift) == pytest.approx(b)

    def test_edge_maps_to_lower(self):
        assert reduce_beta(0.5) == pytest.approx(-0.5)
        assert -0.5 <= reduce_beta(1.5) < 0.5


class TestModelParams:
    def test_beta_folded_on_construction(self):
        p = ModelParams(0.24, 0.4, 0.2, beta=0.75)
        assert p.beta == pytest.approx(-0.25)

    def test_domain_errors(self):
        with pytest.raises(ParameterDomainError):
            ModelParams(-0.1, 0.4, 0.2)
        with pytest.raises(ParameterDomainError):
            ModelParams(0.24, 1.5, 0.2)
        with pytest.raises(ParameterDomainError):
            ModelParams(0.24, 0.4, 0.0)
        with pytest.raises(ParameterDomainError):
            ModelParams(0.24, 0.4, -0.1)

    def test_with_helpers(self):
        p = ModelParams(0.24, 0.4, 0.2)
        assert p.with_beta(0.1).beta == pytest.approx(0.1)
        assert p.with_hbar(0.3).hbar_eff == pytest.approx(0.3)
        assert p.with_beta(0.1).gamma == p.gamma

    def test_json_round_trip(self):
        p = ModelParams(0.29, 0.29, 0.16, beta=-0.125)
        q = model_params_from_json(model_params_to_json(p))
        assert q == p


class TestPhysicalSetup:
    def test_lattice_velocity_and_energy(self):
        s = rb87_setup()
        v = H_PLANCK / (RB87_MASS * SPACING)
        assert s.lattice_velocity == pytest.approx(v)
        assert s.lattice_energy == pytest.approx(0.5 * RB87_MASS * v ** 2)

    def test_dimensionless_depth(self):
        s = rb87_setup(depth_j=3.0 * rb87_setup().lattice_energy)
        assert s.dimensionless_depth == pytest.approx(3.0)

    def test_rejects_negative(self):
        with pytest.raises(ParameterDomainError):
            rb87_setup(omega=-1.0)


class TestDeriveDimensionless:
    def test_hbar_eff_scaling(self):
        # hbar_eff = 4 pi^2 hbar / (M omega d^2): doubling omega halves it
        s1 = rb87_setup(omega=2 * math.pi * 50e3)
        s2 = rb87_setup(omega=2 * math.pi * 100e3)
        p1 = derive_dimensionless(s1)
        p2 = derive_dimensionless(s2)
        assert p1.hbar_eff == pytest.approx(2 * p2.hbar_eff)
        expected = 4 * math.pi ** 2 * HBAR / (
            RB87_MASS * 2 * math.pi * 50e3 * SPACING ** 2)
        assert p1.hbar_eff == pytest.approx(expected)

    def test_omega_inverse_solve_round_trip(self):
        target = 0.2
        omega = omega_for_hbar_eff(RB87_MASS, SPACING, target)
        p = derive_dimensionless(rb87_setup(omega=omega))
        assert p.hbar_eff == pytest.approx(target, rel=1e-12)

    def test_gamma_proportional_to_depth(self):
        s1 = rb87_setup(depth_j=1e-29)
        s2 = rb87_setup(depth_j=2e-29)
        assert derive_dimensionless(s2).gamma == pytest.approx(
            2 * derive_dimensionless(s1).gamma)


class TestLaserCalibration:
    def test_depth_formula(self):
        # s = 1.03e6 P / w0_um^2
        assert lattice_depth_from_laser(2.0, 150e-6) == pytest.approx(
            1.03e6 * 2.0 / 150.0 ** 2)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ParameterDomainError):
            lattice_depth_from_laser(-1.0, 150e-6)
        with pytest.raises(ParameterDomainError):
            lattice_depth_from_laser(1.0, 0.0)


class TestLoading:
    def test_ground_width_scaling(self):
        # a0/d = s^-1/4 / sqrt(2 pi^2); depth x16 halves the width
        e1 = harmonic_loading_estimate(1.0)
        e16 = harmonic_loading_estimate(16.0)
        assert e1.ground_width_ratio == pytest.approx(
            1.0 / math.sqrt(2 * math.pi ** 2))
        assert e16.ground_width_ratio == pytest.approx(
            e1.ground_width_ratio / 2)

    def test_without_setup_nan_fields(self):
        est = harmonic_loading_estimate(100.0)
        assert isinstance(est, LoadingEstimate)
        assert math.isnan(est.trap_frequency)
        assert math.isnan(est.quasimomentum_width)

    def test_quasimomentum_width(self):
        s = rb87_setup()
        expected = RB87_MASS * SPACING * 1e-4 / H_PLANCK
        assert quasimomentum_width(s) == pytest.approx(expected)
        # the experimental cloud spread is of order 0.01 after cooling
        assert expected < 0.1


class TestSetupDescriptor:
    def test_descriptor_round_trip(self, tmp_path):
        desc = {"mass_kg": RB87_MASS, "lattice_spacing_m": SPACING,
                "omega_rad_s": 2 * math.pi * 50e3, "power_w": 2.0,
                "waist_m": 150e-6, "velocity_width_m_s": 1e-4}
        s = setup_from_descriptor(desc)
        expected_s = lattice_depth_from_laser(2.0, 150e-6)
        assert s.dimensionless_depth == pytest.approx(expected_s)
        path = tmp_path / "setup.json"
        path.write_text(json.dumps(desc))
        from modpend.units import load_setup
        assert load_setup(path) == s

    def test_missing_keys_reported(self):
        with pytest.raises(ParameterDomainError, match="power_w"):
            setup_from_descriptor({"mass_kg": RB87_MASS})
