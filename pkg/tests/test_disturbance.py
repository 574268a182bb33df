import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import MODEL_VDP, PLANT_VDP, vdp_theta_star
from offsetfree import autodiff as ad
from offsetfree import disturbance as dist
from offsetfree.dynamics import CstrParams, cstr_rhs, vanderpol_rhs
from offsetfree.errors import DimensionError, UnsupportedFamilyError

CSTR_PLANT = CstrParams()
CSTR_MODEL = CstrParams(arrhenius_prefactor=31437720.0, heat_of_reaction_term=11.0, heat_transfer_term=0.35)


def vdp_fnn():
    return dist.fnn(2, 1, 1, hx_hidden=(6, 6), hy_hidden=(4,))


def brute_force_fnn(theta, layers, z, center, scale):
    """Layer-by-layer forward pass written out with explicit loops."""
    a = [(zi - c) / s for zi, c, s in zip(z, center, scale)]
    i = 0
    n_layers = len(layers) - 1
    for k in range(n_layers):
        n_in, n_out = layers[k], layers[k + 1]
        W = [[theta[i + r * n_in + c] for c in range(n_in)] for r in range(n_out)]
        i += n_in * n_out
        b = theta[i:i + n_out]
        i += n_out
        pre = [sum(W[r][c] * a[c] for c in range(n_in)) + b[r] for r in range(n_out)]
        a = pre if k == n_layers - 1 else [1.0 / (1.0 + np.exp(-p)) for p in pre]
    return np.array(a)


def cstr_theta_star(plant=CSTR_PLANT, model=CSTR_MODEL):
    """Coefficients that make ``model rhs + h_x`` equal the plant rhs.

    With ``rate`` the model reaction rate, the plant rate is
    ``(k0_p / k0_m) rate``.  The energy balance differs by
    ``(dH_p k0_p / k0_m - dH_m) rate - (UA_p - UA_m) (T - Tc)`` and the
    mass balance by ``-(k0_p / k0_m - 1) rate``; ``T - Tc`` is split as
    ``(T - Tf) - (Tc - Tf)``.
    """
    ratio = plant.arrhenius_prefactor / model.arrhenius_prefactor
    dua = plant.heat_transfer_term - model.heat_transfer_term
    return np.array([
        0.0,
        -dua,
        plant.heat_of_reaction_term * ratio - model.heat_of_reaction_term,
        dua,
        0.0,
        0.0,
        -(ratio - 1.0),
    ])


# -- parameter counts ---------------------------------------------------------


def test_vdp_fnn_has_97_parameters():
    assert dist.param_count(vdp_fnn()) == 97


def test_counts_of_cdm_and_pdm():
    assert dist.param_count(dist.cdm(2)) == 1
    assert dist.param_count(dist.pdm_vanderpol()) == 10
    assert dist.param_count(dist.pdm_cstr(CSTR_MODEL)) == 7


def test_cstr_fnn_count_follows_architecture():
    m = dist.fnn(2, 1, 1)
    assert dist.param_count(m) == (3 * 6 + 6) + (6 * 6 + 6) + (6 * 2 + 2) + (2 * 4 + 4) + (4 * 1 + 1)


# -- CDM ----------------------------------------------------------------------


def test_cdm_output_is_theta():
    m = dist.cdm(2)
    np.testing.assert_array_equal(dist.eval_hy(m, np.array([0.1, 0.2]), np.array([0.7])), [0.7])
    np.testing.assert_array_equal(dist.eval_hy(m, np.array([0.1, 0.2]), np.zeros(1)), [0.0])
    assert dist.eval_hx(m, np.zeros(2), np.zeros(1), np.array([0.7])).shape == (0,)


# -- PDM ----------------------------------------------------------------------


def test_pdm_zero_theta_gives_zero():
    m = dist.pdm_vanderpol()
    np.testing.assert_array_equal(dist.eval_hx(m, np.array([0.4, -1.2]), np.array([0.3]), np.zeros(10)), [0.0])


def test_pdm_theta_star_at_unit_point():
    theta = vdp_theta_star()
    d = dist.eval_hx(dist.pdm_vanderpol(), np.array([1.0, 1.0]), np.array([1.0]), theta)
    assert d[0] == pytest.approx(0.2 - 0.28 - 0.2, abs=1e-15)


def test_vdp_theta_star_values():
    np.testing.assert_allclose(vdp_theta_star(), [0, 0.2, 0, 0, 0, 0, 0, -0.28, 0, -0.2], atol=1e-15)


def test_vdp_pdm_matches_basis_dot_product(rng):
    m = dist.pdm_vanderpol()
    for _ in range(20):
        x, u, th = rng.normal(size=2), rng.normal(size=1), rng.normal(size=10)
        basis = dist.pdm_basis(m, x, u)
        assert dist.eval_hx(m, x, u, th)[0] == pytest.approx(basis @ th, rel=1e-13, abs=1e-13)


def test_vdp_pdm_closes_the_mismatch(rng):
    theta = vdp_theta_star()
    for _ in range(50):
        x, u = rng.uniform(-2, 2, size=2), rng.uniform(-2, 2, size=1)
        d = dist.eval_hx(dist.pdm_vanderpol(), x, u, theta)
        np.testing.assert_allclose(vanderpol_rhs(x, u, d, MODEL_VDP), vanderpol_rhs(x, u, None, PLANT_VDP),
                                   atol=1e-13)


def test_cstr_pdm_closes_the_mismatch(rng):
    m = dist.pdm_cstr(CSTR_MODEL)
    theta = cstr_theta_star()
    for _ in range(50):
        x = np.array([rng.uniform(290, 360), rng.uniform(0.5, 10)])
        u = np.array([rng.uniform(280, 320)])
        d = dist.eval_hx(m, x, u, theta)
        np.testing.assert_allclose(cstr_rhs(x, u, d, CSTR_MODEL), cstr_rhs(x, u, None, CSTR_PLANT),
                                   rtol=1e-11, atol=1e-9)


vec = st.lists(st.floats(-3, 3, allow_nan=False), min_size=10, max_size=10)


@settings(max_examples=50, deadline=None)
@given(vec, vec, st.floats(-2, 2), st.floats(-2, 2))
def test_pdm_is_linear_in_theta(t1, t2, a, b):
    m = dist.pdm_vanderpol()
    x, u = np.array([0.7, -1.3]), np.array([0.4])
    t1, t2 = np.array(t1), np.array(t2)
    lhs = dist.eval_hx(m, x, u, a * t1 + b * t2)
    rhs = a * dist.eval_hx(m, x, u, t1) + b * dist.eval_hx(m, x, u, t2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


# -- FNN ----------------------------------------------------------------------


def test_fnn_zero_theta_matches_oracle():
    m = vdp_fnn()
    theta = np.zeros(97)
    x, u = np.array([0.5, -0.3]), np.array([0.2])
    nx = dist.layer_slices(m)[5][1].stop
    np.testing.assert_array_equal(dist.eval_hx(m, x, u, theta),
                                  brute_force_fnn(theta[:nx], m.hx_layers, [*x, *u], m.hx_center, m.hx_scale))
    np.testing.assert_array_equal(dist.eval_hx(m, x, u, theta), [0.0, 0.0])


def test_fnn_seeded_theta_matches_oracle():
    m = vdp_fnn()
    theta = dist.xavier_init(m, seed=3)
    theta = theta + np.random.default_rng(3).normal(scale=0.1, size=theta.size)  # nonzero biases too
    x, u = np.array([0.5, -0.3]), np.array([0.2])
    nx = dist.layer_slices(m)[5][1].stop
    hx = brute_force_fnn(theta[:nx], m.hx_layers, [*x, *u], m.hx_center, m.hx_scale)
    hy = brute_force_fnn(theta[nx:], m.hy_layers, list(x), m.hy_center, m.hy_scale)
    np.testing.assert_allclose(dist.eval_hx(m, x, u, theta), hx, atol=1e-12)
    np.testing.assert_allclose(dist.eval_hy(m, x, theta), hy, atol=1e-12)


def test_fnn_input_scaling_matches_oracle():
    m = dist.fnn(2, 1, 1, hx_center=(311.0, 8.5, 298.0), hx_scale=(5.0, 0.5, 5.0),
                 hy_center=(311.0, 8.5), hy_scale=(5.0, 0.5))
    theta = dist.xavier_init(m, seed=1)
    x, u = np.array([312.3, 8.1]), np.array([301.0])
    nx = dist.layer_slices(m)[5][1].stop
    np.testing.assert_allclose(dist.eval_hx(m, x, u, theta),
                               brute_force_fnn(theta[:nx], m.hx_layers, [*x, *u], m.hx_center, m.hx_scale),
                               atol=1e-12)
    np.testing.assert_allclose(dist.eval_hy(m, x, theta),
                               brute_force_fnn(theta[nx:], m.hy_layers, list(x), m.hy_center, m.hy_scale),
                               atol=1e-12)


def test_xavier_biases_zero_and_weights_bounded():
    m = vdp_fnn()
    theta = dist.xavier_init(m, seed=11)
    for name, sl, kind, a, b in dist.layer_slices(m):
        block = theta[sl]
        if kind == "bias":
            assert np.all(block == 0.0), name
        else:
            assert np.all(np.abs(block) <= np.sqrt(6.0 / (a + b))), name
    first = dist.layer_slices(m)[0]
    assert (first[3], first[4]) == (3, 6)
    assert np.max(np.abs(theta[first[1]])) <= np.sqrt(6.0 / 9.0)


def test_xavier_is_deterministic():
    m = vdp_fnn()
    np.testing.assert_array_equal(dist.xavier_init(m, 5), dist.xavier_init(m, 5))
    assert not np.array_equal(dist.xavier_init(m, 5), dist.xavier_init(m, 6))


def test_xavier_rejects_non_fnn():
    with pytest.raises(UnsupportedFamilyError):
        dist.xavier_init(dist.pdm_vanderpol(), 0)


def test_wrong_theta_length_rejected():
    with pytest.raises(DimensionError):
        dist.eval_hx(dist.pdm_vanderpol(), np.zeros(2), np.zeros(1), np.zeros(9))


def test_wrong_state_dimension_rejected():
    with pytest.raises(DimensionError):
        dist.eval_hy(dist.cdm(2), np.zeros(3), np.zeros(1))


def test_unknown_family_rejected():
    with pytest.raises(UnsupportedFamilyError):
        dist.DisturbanceModel("RNN", 2, 1, 1, 0, 1)


# -- Jacobians ------------------------------------------------------------------


def _fd(f, p, h=1e-6):
    return np.stack([(f(p + h * e) - f(p - h * e)) / (2 * h) for e in np.eye(p.size)], axis=-1)


@pytest.mark.parametrize("family", ["CDM", "PDM", "FNN"])
def test_parameter_and_state_jacobians_match_fd(family, rng):
    m = {"CDM": dist.cdm(2), "PDM": dist.pdm_vanderpol(), "FNN": vdp_fnn()}[family]
    n = dist.param_count(m)
    for _ in range(20):
        x, u = rng.uniform(-2, 2, size=2), rng.uniform(-2, 2, size=1)
        theta = rng.uniform(-2, 2, size=n)
        p = np.concatenate([x, u, theta])

        def hx(s):
            return dist.eval_hx(m, s[:2], s[2:3], s[3:])

        def hy(s):
            return dist.eval_hy(m, s[:2], s[3:])

        for f in (hx, hy):
            J = ad.jacobian(f, p)
            np.testing.assert_allclose(J, _fd(f, p).reshape(J.shape), atol=1e-6)
