import math

import numpy as np
import pytest

from nilcavity.control import (
    InfeasibleProjectionError,
    KerrParams,
    ResonanceCollisionError,
    SqueezeParams,
    displace_then_vacuum,
    ghz_condition,
    kerr_dynamics_params,
    kerr_project,
    measure_photon_number,
    squeeze_then_vacuum,
)
from nilcavity.coupling import CouplingCoefficients
from nilcavity.nilpotent import Bipartition, NilpotentPolynomial, is_separable, poly_log
from nilcavity.state import build_joint_state


def ghz_vector(N):
    v = np.zeros(1 << N, complex)
    v[0] = v[-1] = 1 / math.sqrt(2)
    return v


def overlap(a, b):
    return abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))


def test_vacuum_detection_gives_pair_nilpotential():
    bil = np.array([[0, 0.1, 0.05j], [0, 0, 0.2], [0, 0, 0]])
    st = build_joint_state(CouplingCoefficients([0, 0, 0], bil))
    res = measure_photon_number(st, 0)
    assert res.success_probability == pytest.approx(1.0)
    f = poly_log(res.polynomial)
    expected = NilpotentPolynomial(3, 0, {(1, 2): 0.1, (1, 3): 0.05j, (2, 3): 0.2})
    assert f.allclose(expected, atol=1e-15)


@pytest.mark.parametrize("c", [0.2, 0.5 + 0.5j, 1.3])
def test_two_atom_photon_counting(c):
    st = build_joint_state(CouplingCoefficients.uniform(2, c))
    x = abs(c) ** 2
    one = measure_photon_number(st, 1)
    assert one.success_probability == pytest.approx(2 * x / (1 + 2 * x + 2 * x * x), abs=1e-15)
    assert overlap(one.vector(), [0, 1, 1, 0]) == pytest.approx(1, abs=1e-15)
    two = measure_photon_number(st, 2)
    assert overlap(two.vector(), [0, 0, 0, 1]) == pytest.approx(1, abs=1e-15)


@pytest.mark.parametrize("N", [1, 3, 5])
def test_photon_counting_probabilities_sum_to_one(rng, N):
    lin = 0.4 * (rng.normal(size=N) + 1j * rng.normal(size=N))
    bil = 0.2 * (rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N)))
    st = build_joint_state(CouplingCoefficients(lin, bil))
    total = sum(measure_photon_number(st, d).success_probability for d in range(N + 1))
    assert total == pytest.approx(1, abs=1e-12)


def test_measure_out_of_range():
    st = build_joint_state(CouplingCoefficients.uniform(2, 0.1))
    with pytest.raises(ValueError):
        measure_photon_number(st, 3)


def test_displace_zero_is_vacuum_detection(rng):
    st = build_joint_state(CouplingCoefficients(rng.normal(size=3) * 0.3, rng.normal(size=(3, 3)) * 0.2))
    a = displace_then_vacuum(st, 0)
    b = measure_photon_number(st, 0)
    assert a.polynomial.allclose(b.polynomial, atol=1e-14)
    assert a.success_probability == pytest.approx(b.success_probability, abs=1e-12)


@pytest.mark.parametrize("lam", [0.3, -0.7j, 1 + 0.5j])
def test_displace_single_atom(lam):
    c = 0.4 - 0.2j
    st = build_joint_state(CouplingCoefficients([c], None))
    res = displace_then_vacuum(st, lam)
    expected = np.array([1, -np.conj(lam) * c])
    assert overlap(res.vector(), expected) == pytest.approx(1, abs=1e-14)
    prob = math.exp(-abs(lam) ** 2) * (1 + abs(lam * c) ** 2) / (1 + abs(c) ** 2)
    assert res.success_probability == pytest.approx(prob, abs=1e-12)
    assert res.details["fidelity_oracle"] == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize("lam", [0.4, 1.1j, -0.8 + 0.3j])
def test_displacement_cannot_create_entanglement(lam):
    st = build_joint_state(CouplingCoefficients([0.3, 0.5j], None))
    res = displace_then_vacuum(st, lam)
    assert is_separable(poly_log(res.polynomial), Bipartition({1}, {2}))


@pytest.mark.parametrize("lam", [0.4, 1.1j, -0.8 + 0.3j])
def test_displacement_keeps_entanglement(lam):
    st = build_joint_state(CouplingCoefficients([0.3, 0.5j], [[0, 0.2], [0, 0]]))
    assert not is_separable(poly_log(measure_photon_number(st, 0).polynomial), Bipartition({1}, {2}))
    res = displace_then_vacuum(st, lam)
    assert not is_separable(poly_log(res.polynomial), Bipartition({1}, {2}))


def test_squeeze_params():
    p = SqueezeParams(0.5, 0.4)
    assert p.eta == pytest.approx(0.2)
    assert p.zeta == pytest.approx(2 * math.tanh(0.2) - 0.2)
    assert p.r == pytest.approx(math.sqrt(2 * math.pi) / math.sqrt(1 + math.exp(0.4)))
    with pytest.raises(ValueError):
        SqueezeParams(0.1 + 0.1j, 1.0)


@pytest.mark.parametrize("x", [1e-3, 1e-2, 3e-2])
def test_zeta_first_order(x):
    p = SqueezeParams(x, 1.0)
    assert abs(p.zeta - x) <= x**3
    assert abs(p.zeta_exact - x) <= 2 * x**3


def test_squeeze_zero_is_vacuum_detection(rng):
    st = build_joint_state(CouplingCoefficients(rng.normal(size=3) * 0.3, rng.normal(size=(3, 3)) * 0.2))
    a = squeeze_then_vacuum(st, SqueezeParams(0.7, 0.0))
    b = measure_photon_number(st, 0)
    assert a.polynomial.allclose(b.polynomial, atol=1e-14)
    assert a.success_probability == pytest.approx(b.success_probability, abs=1e-12)


def test_squeeze_two_ensemble_cross_term():
    mu, gt = 0.3, 0.04
    st = build_joint_state(CouplingCoefficients.uniform(2, mu))
    res = squeeze_then_vacuum(st, SqueezeParams(gt, 1.0))
    f = poly_log(res.polynomial)
    assert f.coeff((1, 2)) == pytest.approx(2 * res.details["zeta"] * mu**2, abs=1e-15)


@pytest.mark.parametrize("N", [2, 3, 4])
@pytest.mark.parametrize("gt", [0.02, -0.05, 0.05])
def test_squeeze_matches_oracle_small_gt(N, gt):
    st = build_joint_state(CouplingCoefficients.uniform(N, 0.3 + 0.2j))
    res = squeeze_then_vacuum(st, SqueezeParams(gt, 1.0))
    assert res.details["fidelity_oracle"] >= 1 - 1e-6
    assert res.success_probability == pytest.approx(res.details["probability_closed_form"], abs=1e-12)


@pytest.mark.parametrize("gt", [0.1, 0.4, -0.8])
def test_squeeze_exact_zeta_matches_oracle_everywhere(rng, gt):
    st = build_joint_state(CouplingCoefficients(rng.normal(size=3) * 0.4, rng.normal(size=(3, 3)) * 0.1))
    res = squeeze_then_vacuum(st, SqueezeParams(gt, 1.0), zeta="exact")
    assert res.details["fidelity_oracle"] == pytest.approx(1, abs=1e-12)


def test_kerr_project_c_zero_is_vacuum(rng):
    st = build_joint_state(CouplingCoefficients(rng.normal(size=3) * 0.3, None))
    a = kerr_project(st, 1.0, 0.0)
    b = measure_photon_number(st, 0)
    assert a.polynomial.allclose(b.polynomial, atol=1e-14)
    assert a.success_probability == pytest.approx(b.success_probability)


def test_kerr_project_gap_too_large():
    st = build_joint_state(CouplingCoefficients.uniform(2, 0.3))
    with pytest.raises(InfeasibleProjectionError):
        kerr_project(st, 1, 1, gap=3)


@pytest.mark.parametrize("N", range(2, 9))
def test_ghz_from_derived_condition(N):
    st = build_joint_state(CouplingCoefficients.uniform(N, 1.0))
    B, C = ghz_condition(st.coefficients.linear)
    res = kerr_project(st, B, C)
    assert overlap(res.vector(), ghz_vector(N)) ** 2 >= 1 - 1e-12


def test_ghz_two_atoms_is_bell():
    st = build_joint_state(CouplingCoefficients.uniform(2, 1.0))
    res = kerr_project(st, math.sqrt(2), 1.0)  # B* = sqrt(2) C* with I_n = 1
    np.testing.assert_allclose(res.vector(), [1 / math.sqrt(2), 0, 0, 1 / math.sqrt(2)], atol=1e-15)


def test_published_ghz_condition_falls_short():
    st = build_joint_state(CouplingCoefficients.uniform(3, 1.0))
    res = kerr_project(st, *ghz_condition(st.coefficients.linear, "published"))
    # amplitudes 1 : 6 instead of 1 : 1
    assert overlap(res.vector(), ghz_vector(3)) ** 2 == pytest.approx(49 / 74, abs=1e-12)


def test_ghz_condition_with_four_atoms_off_by_two():
    st = build_joint_state(CouplingCoefficients.uniform(4, 1.0))
    B, C = ghz_condition(st.coefficients.linear)
    res = kerr_project(st, 2 * B, C)
    fid = overlap(res.vector(), ghz_vector(4)) ** 2
    assert fid == pytest.approx(9 / 10, abs=1e-12)  # amplitudes 2 : 1


def test_kerr_params_resonance():
    k = KerrParams(kappa=0.5, laser_amplitude=0.2, gap=3, omega_cavity=1.0)
    assert k.omega_laser == pytest.approx(2.5)
    np.testing.assert_allclose(k.level_energies(5)[[0, 3]], 0, atol=1e-15)
    with pytest.raises(ValueError):
        KerrParams(kappa=0.5, laser_amplitude=0.2, gap=3, omega_cavity=1.0, omega_laser=2.0)


def test_kerr_published_coupling_pole():
    with pytest.raises(ResonanceCollisionError):
        KerrParams(kappa=1.0, laser_amplitude=0.2, gap=3).coupling("published")
    v = KerrParams(kappa=1.0, laser_amplitude=0.5, gap=2, omega_cavity=0.5).coupling("published")
    expected = 0.5**6 / (math.sqrt(2) * (1 - 2.5) * (2 - 2.5))
    assert v == pytest.approx(expected)


def test_kerr_timing():
    k = KerrParams(kappa=1.0, laser_amplitude=0.3, gap=3)
    V = k.coupling()
    assert kerr_dynamics_params(k, 0)[1] == 0
    assert kerr_dynamics_params(k, 1)[1] == pytest.approx(math.pi / (4 * V))
    E = (0.01 * 4 / math.sqrt(6)) ** (1 / 9)  # chosen so that V_03 = 0.01
    k = KerrParams(kappa=1.0, laser_amplitude=E, gap=3)
    V, t = kerr_dynamics_params(k, math.sqrt(6))
    assert V == pytest.approx(0.01, rel=1e-12)
    assert t == pytest.approx(math.atan(math.sqrt(6)) / 0.01, rel=1e-12)
