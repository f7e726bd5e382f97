import math

import numpy as np
import pytest

from ldpfreq.bounds import (
    bound_report,
    entropy_bound_forms,
    eps_delta_bound,
    eps_gamma_bound,
    eps_lower_bounds,
    gamma_delta_mc,
    linalg_bound,
    logdet_spd,
    matrix_D,
    matrix_E,
    matrix_G,
    rr_exact_mse,
)
from ldpfreq.core import DirichletPrior, InvariantError
from ldpfreq.mechanisms import RRSpec, UESpec, rr_matrix, ue_matrix
from conftest import random_mechanism


def test_det_identity(rng):
    for _ in range(20):
        mech = random_mechanism(rng, int(rng.integers(2, 9)), int(rng.integers(2, 13)) + 7)
        for x in range(mech.input_size):
            prod = np.prod(mech.matrix[:, x])
            assert abs(np.linalg.det(matrix_E(mech, x)) - prod) / prod <= 1e-10


def test_g_at_point_mass_is_e(rng):
    mech = random_mechanism(rng, 3, 5)
    p = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(matrix_G(mech, p), matrix_E(mech, 1))


def test_matrices_are_spd(rng):
    mech = random_mechanism(rng, 4, 6)
    p = rng.dirichlet(np.ones(4))
    for m in (matrix_D(mech, p), matrix_G(mech, p), matrix_E(mech, 2)):
        np.testing.assert_allclose(m, m.T, atol=1e-15)
        logdet_spd(m)


def test_d_rejects_boundary():
    with pytest.raises(InvariantError):
        matrix_D(rr_matrix(RRSpec(2, 1.0)), [1.0, 0.0])


def test_d_binary_rr_closed_form():
    # for a=2, det D_p restricted to the tangent direction is the Fisher information
    mech = rr_matrix(RRSpec(2, 1.0))
    p = np.array([0.3, 0.7])
    D = matrix_D(mech, p)
    qp = mech.matrix @ p
    expected = sum((mech.matrix[y, 0] - mech.matrix[y, 1]) ** 2 / qp[y] for y in range(2))
    u = np.array([1.0, -1.0])
    assert u @ D @ u == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize(
    "mech",
    [rr_matrix(RRSpec(2, 1.0)), rr_matrix(RRSpec(4, 0.5)), ue_matrix(UESpec.symmetric(3, 1.0))],
)
def test_constants_dominate_epsilon_bounds(mech):
    a, b = mech.input_size, mech.output_size
    eps = mech.epsilon
    g, g_se, d, d_se, used, rejected = gamma_delta_mc(mech, DirichletPrior.jeffreys(a), 2000, 1)
    assert used + rejected == 2000
    assert g >= eps_gamma_bound(a, eps) - 3 * g_se
    assert d >= eps_delta_bound(a, b, eps) - 3 * d_se
    assert d <= g + 1e-12


def test_mc_deterministic():
    mech = rr_matrix(RRSpec(3, 1.0))
    assert gamma_delta_mc(mech, DirichletPrior.jeffreys(3), 500, 9) == gamma_delta_mc(
        mech, DirichletPrior.jeffreys(3), 500, 9
    )


def test_mc_sample_floor():
    with pytest.raises(InvariantError):
        gamma_delta_mc(rr_matrix(RRSpec(2, 1.0)), DirichletPrior.jeffreys(2), 10)


def test_eps_lower_bounds_value():
    distr, freq = eps_lower_bounds(2, 2, 1.0, 1000)
    assert distr == pytest.approx(2 / (1000 * (math.e - 1) ** 2), rel=1e-14)
    assert distr == pytest.approx(6.7739e-4, rel=1e-4)
    assert freq == pytest.approx(distr * math.exp(-1.0), rel=1e-14)


def test_eps_bounds_monotone():
    vals = [eps_lower_bounds(4, 4, e, 100)[0] for e in (0.5, 1.0, 2.0, 4.0)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_entropy_form_values():
    assert entropy_bound_forms(0.0, 2) == pytest.approx(1 / (math.pi * math.e), rel=1e-14)
    assert entropy_bound_forms(0.0, 2) == pytest.approx(0.117099, rel=1e-5)
    assert entropy_bound_forms(0.0, 2, n=10, target="freq") == pytest.approx(0.117099e-2, rel=1e-5)
    with pytest.raises(InvariantError):
        entropy_bound_forms(0.0, 2, target="freq")


def test_linalg_bound_stderr():
    value, se = linalg_bound(0.3, 3, stderr=0.01)
    assert value == pytest.approx(entropy_bound_forms(0.3, 3))
    # d/dh of c exp(2h/(a-1)) is value * 2/(a-1)
    assert se == pytest.approx(value * 0.01, rel=1e-12)


def test_rr_exact_mse_values():
    distr, freq = rr_exact_mse(1.0, 10**4, DirichletPrior.jeffreys(2))
    e = math.e
    assert freq == pytest.approx(2 * e / (1e4 * (e - 1) ** 2), rel=1e-14)
    assert freq == pytest.approx(1.8413e-4, rel=1e-4)
    assert distr == pytest.approx(2e-4 * (e / (e - 1) ** 2 + 0.125), rel=1e-14)


def test_rr_exact_mse_limit_ratio():
    _, freq = rr_exact_mse(0.01, 1, cross_moment=0.125)
    # eps^2 e^eps / (e^eps - 1)^2 = 1 - eps^2/12 + eps^4/240 - ...
    assert freq / (2 / 0.01**2) == pytest.approx(1 - 1e-4 / 12 + 1e-8 / 240, rel=1e-12)


def test_bound_report_fields():
    rep = bound_report(rr_matrix(RRSpec(2, 1.0)), DirichletPrior.jeffreys(2), 500, 0, n=100)
    d = rep.to_dict()
    assert d["n"] == 100 and d["mc_samples"] == 500
    assert d["mse_lower_distr"] == pytest.approx(eps_lower_bounds(2, 2, 1.0, 100)[0])
