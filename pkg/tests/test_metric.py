import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import lp_metric_by_hand
from plexadapt.fields import FieldError, NodalField, sym_det, sym_eig
from plexadapt.mesh import MeshError, unit_square_mesh
from plexadapt.metric import (HessianAccumulator, MetricParams, accumulate, clamp_metric, clamp_metric_array,
                              complexity_term, floor_determinant, lp_metric, lp_normalization, metric_complexity,
                              recover_hessian)

from conftest import jittered_square


def _interior(mesh):
    return mesh.vertex_tags() == 0


@pytest.mark.parametrize("func,exact", [
    (lambda x, y: x**2 + y**2, (2.0, 0.0, 2.0)),
    (lambda x, y: x * y, (0.0, 1.0, 0.0)),
    (lambda x, y: 3 * x**2 - 2 * x * y + 0.5 * y**2 + x, (6.0, -2.0, 1.0)),
])
def test_quadratic_hessian_exact_at_interior_vertices(func, exact):
    m = unit_square_mesh(16)
    H = recover_hessian(m, NodalField.from_function(m, func)).values[_interior(m)]
    scale = np.abs(exact).max()
    assert np.abs(H - np.array(exact)).max() <= 1e-8 * scale


def test_quadratic_hessian_on_boundary_vertices():
    # boundary values are taken from interior neighbours, so quadratics are exact there too
    m = unit_square_mesh(8)
    H = recover_hessian(m, NodalField.from_function(m, lambda x, y: 3 * x**2 + y**2)).values
    assert np.abs(H - [6.0, 0.0, 2.0]).max() <= 1e-8


@pytest.mark.parametrize("mesh", [unit_square_mesh(16), jittered_square(12, seed=4)])
def test_linear_field_has_zero_hessian_everywhere(mesh):
    H = recover_hessian(mesh, NodalField.from_function(mesh, lambda x, y: 2 - 3 * x + 5 * y)).values
    assert np.abs(H).max() <= 1e-10


def test_constant_field_hessian_is_exactly_zero():
    m = jittered_square(8, seed=1)
    assert np.all(recover_hessian(m, NodalField.constant(m, 7.0)).values == 0.0)


def test_recovery_is_linear():
    m = jittered_square(10, seed=2)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, m.num_vertices))
    Ha = recover_hessian(m, NodalField(m, a)).values
    Hb = recover_hessian(m, NodalField(m, b)).values
    Hab = recover_hessian(m, NodalField(m, 2 * a - 3 * b)).values
    assert np.allclose(Hab, 2 * Ha - 3 * Hb, atol=1e-9 * np.abs(Hab).max())


def test_recovery_rejects_inverted_cells():
    m = unit_square_mesh(2)
    xy = m.vertex_coords()
    centre = int(np.flatnonzero((xy[:, 0] == 0.5) & (xy[:, 1] == 0.5))[0])
    m.move_vertex(centre, (1.4, 1.4))
    with pytest.raises(MeshError):
        recover_hessian(m, NodalField.constant(m, 1.0))


def test_recovery_needs_scalar():
    m = unit_square_mesh(2)
    with pytest.raises(FieldError):
        recover_hessian(m, NodalField.constant(m, [1.0, 2.0]))


# -- accumulation -------------------------------------------------------------


def _tensor(m, t):
    return NodalField.constant(m, np.asarray(t, dtype=float))


def test_single_sample_average():
    m = unit_square_mesh(2)
    acc = accumulate(HessianAccumulator(m), _tensor(m, [1.0, 2.0, -3.0]), 0.3)
    expected = np.array([[1, 2], [2, -3]])
    w, V = np.linalg.eigh(expected)
    absm = V @ np.diag(np.abs(w)) @ V.T
    assert np.allclose(acc.finalize().values, [absm[0, 0], absm[0, 1], absm[1, 1]], atol=1e-12)


def test_two_equal_samples():
    m = unit_square_mesh(2)
    acc = HessianAccumulator(m)
    for _ in range(2):
        acc.add(_tensor(m, [2.0, 0.5, 1.0]), 0.1)
    assert np.allclose(acc.finalize().values, [2.0, 0.5, 1.0], atol=1e-12)
    assert acc.n_samples == 2 and acc.weight == pytest.approx(0.2)


def test_psd_samples_average_componentwise():
    m = unit_square_mesh(2)
    acc = HessianAccumulator(m).add(_tensor(m, [2, 0, 0]), 1.0).add(_tensor(m, [0, 0, 2]), 1.0)
    assert np.allclose(acc.finalize().values, [1, 0, 1], atol=1e-15)


@settings(max_examples=30)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=6))
def test_equal_weight_average_matches_mean_of_abs(samples):
    m = unit_square_mesh(1)
    acc = HessianAccumulator(m)
    absvals = []
    for s in samples:
        acc.add(_tensor(m, s), 0.25)
        w, V = np.linalg.eigh(np.array([[s[0], s[1]], [s[1], s[2]]]))
        a = V @ np.diag(np.abs(w)) @ V.T
        absvals.append([a[0, 0], a[0, 1], a[1, 1]])
    out = acc.finalize().values[0]
    assert np.allclose(out, np.mean(absvals, axis=0), atol=1e-12 * (1 + np.abs(absvals).max()))


def test_zero_weight_falls_back_to_plain_mean():
    m = unit_square_mesh(1)
    acc = HessianAccumulator(m).add(_tensor(m, [4, 0, 4]), 0.0)
    assert np.allclose(acc.finalize().values, [4, 0, 4])


def test_accumulator_mesh_mismatch():
    m1, m2 = unit_square_mesh(2), unit_square_mesh(2)
    with pytest.raises(FieldError):
        HessianAccumulator(m1).add(_tensor(m2, [1, 0, 1]), 1.0)
    with pytest.raises(ValueError):
        HessianAccumulator(m1).finalize()


# -- metric ---------------------------------------------------------------------


def _params(**kw):
    base = dict(N_st=1e4, p=2, d=2, tau_integrals=[10.0], h_min=1e-4, h_max=10.0, a_max=1e4)
    base.update(kw)
    return MetricParams(**base)


@pytest.mark.parametrize("p", [1, 2, 4, math.inf])
def test_complexity_term_identity(p):
    m = unit_square_mesh(4)
    assert complexity_term(m, _tensor(m, [1, 0, 1]), _params(p=p)) == pytest.approx(1.0, rel=1e-14)


def test_complexity_term_scaled_identity():
    m = unit_square_mesh(4)
    assert complexity_term(m, _tensor(m, [4, 0, 4]), _params()) == pytest.approx(16 ** (1 / 3), rel=1e-12)
    assert complexity_term(m, _tensor(m, [4, 0, 4]), _params()) == pytest.approx(2.5198421, rel=1e-7)


def test_complexity_term_zero_hessian_uses_floor():
    m = unit_square_mesh(4)
    prm = _params(h_max=1.0)
    assert prm.det_floor == pytest.approx(1e-10)
    assert complexity_term(m, _tensor(m, [0, 0, 0]), prm) == pytest.approx(prm.det_floor ** (1 / 3), rel=1e-9)


def test_complexity_term_rejects_indefinite():
    m = unit_square_mesh(2)
    with pytest.raises(FieldError):
        complexity_term(m, _tensor(m, [1, 0, -1]), _params())


def test_floor_determinant_cases():
    out = floor_determinant(np.array([[4.0, 0, 0], [0, 0, 0], [2, 0, 3]]), 1e-2)
    assert np.allclose(out[0], [4, 0, 1e-2 / 4])
    assert np.allclose(out[1], [0.1, 0, 0.1])
    assert np.allclose(out[2], [2, 0, 3])


def test_hand_derived_metric_is_1000_identity():
    m = unit_square_mesh(6)
    (M,) = lp_metric([m], [_tensor(m, [1, 0, 1])], _params())
    expected = lp_metric_by_hand(np.eye(2), 10, 1e4)
    assert np.allclose(expected, 1000 * np.eye(2), rtol=1e-12)
    assert np.abs(M.values - [1000, 0, 1000]).max() <= 1e-9 * 1000
    assert metric_complexity(m, M) == pytest.approx(1000, rel=1e-12)


def test_two_identical_intervals_halve_the_spatial_complexity():
    m = unit_square_mesh(6)
    H = _tensor(m, [3, 1, 2])
    Ms = lp_metric([m, m], [H, H], _params(tau_integrals=[10.0, 10.0]))
    assert np.allclose(Ms[0].values, Ms[1].values)
    assert metric_complexity(m, Ms[0]) == pytest.approx(1e4 / (2 * 10), rel=1e-12)
    # space-time complexity sums back to the target
    assert sum(metric_complexity(m, M) * 10 for M in Ms) == pytest.approx(1e4, rel=1e-12)


def _varying_hessian(m):
    xy = m.vertex_coords()
    x, y = xy[:, 0], xy[:, 1]
    return NodalField(m, np.column_stack([1 + 5 * x**2, 0.5 * x * y, 2 + 3 * y]), "tensor")


@pytest.mark.parametrize("alpha", [0.1, 10.0])
def test_scale_invariance(alpha):
    m = jittered_square(10, seed=7)
    H = _varying_hessian(m)
    prm = _params()
    (M1,) = lp_metric([m], [H], prm)
    (M2,) = lp_metric([m], [NodalField(m, alpha * H.values, "tensor")], prm)
    c1, c2 = metric_complexity(m, M1), metric_complexity(m, M2)
    assert abs(c2 - c1) <= 1e-6 * c1
    d1, d2 = sym_det(M1.values), sym_det(M2.values)
    cell1 = np.argmax(d1[m.triangles()].mean(axis=1))
    cell2 = np.argmax(d2[m.triangles()].mean(axis=1))
    assert cell1 == cell2


def test_space_time_complexity_matches_target_for_varying_hessians():
    m1, m2 = jittered_square(8, seed=1), jittered_square(11, seed=2)
    prm = _params(tau_integrals=[7.0, 13.0])
    Ms = lp_metric([m1, m2], [_varying_hessian(m1), NodalField(m2, 4 * _varying_hessian(m2).values)], prm,
                   clamp=False)
    # Sum of C_i n_i = N_st holds up to the difference between the two vertex quadratures
    total = metric_complexity(m1, Ms[0]) * 7 + metric_complexity(m2, Ms[1]) * 13
    assert total == pytest.approx(1e4, rel=2e-2)


def test_permutation_equivariance():
    m1, m2, m3 = unit_square_mesh(3), jittered_square(4, seed=1), unit_square_mesh(5)
    Hs = [_varying_hessian(m) for m in (m1, m2, m3)]
    taus = [5.0, 8.0, 11.0]
    out = lp_metric([m1, m2, m3], Hs, _params(tau_integrals=taus))
    perm = [2, 0, 1]
    out_p = lp_metric([[m1, m2, m3][i] for i in perm], [Hs[i] for i in perm],
                      _params(tau_integrals=[taus[i] for i in perm]))
    for k, i in enumerate(perm):
        assert np.allclose(out_p[k].values, out[i].values, rtol=1e-13)


def test_doubling_budget_doubles_complexity():
    m = jittered_square(10, seed=3)
    H = _varying_hessian(m)
    (M1,) = lp_metric([m], [H], _params(N_st=1e4))
    (M2,) = lp_metric([m], [H], _params(N_st=2e4))
    assert metric_complexity(m, M2) == pytest.approx(2 * metric_complexity(m, M1), rel=1e-12)


def test_normalization_shared_by_all_intervals():
    m = unit_square_mesh(4)
    H1, H2 = _tensor(m, [1, 0, 1]), _tensor(m, [9, 0, 1])
    prm = _params(tau_integrals=[10.0, 10.0])
    g = lp_normalization([m, m], [H1, H2], prm)
    K1, K2 = 1.0, 9 ** (1 / 3)
    assert g == pytest.approx(1e4 * ((K1 + K2) * 10 ** (2 / 3)) ** -1, rel=1e-12)


def test_p_infinity_limits():
    m = unit_square_mesh(4)
    (M,) = lp_metric([m], [_tensor(m, [4, 0, 4])], _params(p=math.inf))
    # K = int sqrt(det H) = 4, factor N/(K n) = 250, times H = 1000 I
    assert np.allclose(M.values, [1000, 0, 1000], rtol=1e-12)


def test_metric_argument_errors():
    m = unit_square_mesh(2)
    with pytest.raises(ValueError):
        lp_metric([], [], _params())
    with pytest.raises(ValueError):
        lp_metric([m, m], [_tensor(m, [1, 0, 1])] * 2, _params())


@pytest.mark.parametrize("kw", [dict(N_st=0), dict(h_min=1.0, h_max=0.5), dict(a_max=0.5), dict(p=0.5),
                                dict(tau_integrals=[0.0])])
def test_metric_params_validation(kw):
    with pytest.raises(ValueError):
        _params(**kw)


# -- clamping -------------------------------------------------------------------


def test_clamp_inside_bounds_unchanged():
    M = np.array([[5.0, 1.0, 3.0]])
    assert np.allclose(clamp_metric_array(M, 1e-2, 10.0, 100.0), M, atol=1e-12)


def test_clamp_zero_metric():
    m = unit_square_mesh(1)
    out = clamp_metric(_tensor(m, [0, 0, 0]), _params(h_min=1e-3, h_max=0.5, a_max=100))
    assert np.allclose(out.values, [4.0, 0.0, 4.0])


def test_clamp_caps_size_then_anisotropy():
    out = clamp_metric_array(np.array([[1e8, 0.0, 1.0]]), 1e-3, 10.0, 100.0)
    assert np.allclose(out, [[1e6, 0.0, 1e2]], rtol=1e-12)


@given(st.floats(-1e9, 1e9), st.floats(-1e9, 1e9), st.floats(-1e9, 1e9))
def test_clamp_output_bounds(a, b, c):
    h_min, h_max, a_max = 1e-3, 2.0, 50.0
    l1, l2, _ = sym_eig(clamp_metric_array(np.array([a, b, c]), h_min, h_max, a_max))
    lo, hi = 1 / h_max**2, 1 / h_min**2
    assert lo * (1 - 1e-9) <= l2 <= l1 <= hi * (1 + 1e-9)
    assert l1 / l2 <= a_max**2 * (1 + 1e-9)
