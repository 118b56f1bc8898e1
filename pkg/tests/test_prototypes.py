import numpy as np
import pytest
from numpy.testing import assert_allclose

from otl.errors import NotADistribution, ShapeMismatch
from otl.prototypes import PrototypeGroup, grad_parametric, probs, sgd_prototypes, update_nonparametric

from conftest import central_diff, rel_err, unit_rows


def test_probs_examples():
    g = PrototypeGroup(np.array([[1.0, 0.0], [1.0, 0.0]]), tau=1.0)
    assert_allclose(probs(g, [[0.6, 0.8], [0.0, 1.0]]), 0.5)
    g = PrototypeGroup(np.eye(2), tau=1.0)
    assert_allclose(probs(g, [[1.0, 0.0]])[:, 0], [0.73105858, 0.26894142], atol=1e-8)
    g = PrototypeGroup(np.eye(2), tau=0.01)
    sharp = probs(g, [[1.0, 0.0]])[:, 0]
    assert sharp[0] == pytest.approx(1.0, abs=1e-40) and sharp[1] < 1e-40


def test_probs_columns_sum_to_one(rng):
    g = PrototypeGroup(unit_rows(rng, 5, 4), tau=0.05)
    assert_allclose(probs(g, unit_rows(rng, 9, 4)).sum(axis=0), 1.0, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        probs(g, np.ones((2, 3)))


def test_group_validation():
    with pytest.raises(ValueError):
        PrototypeGroup(np.eye(2), tau=0.0)
    with pytest.raises(ValueError):
        PrototypeGroup(np.eye(2), mode="other")


def test_update_nonparametric_examples():
    g = PrototypeGroup(np.array([[0.0, 1.0], [1.0, 0.0], [0.6, 0.8]]))
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = update_nonparametric(g, feats, [0, 1])
    assert_allclose(out.C[:2], feats)
    assert_allclose(out.C[2], [0.6, 0.8])
    out = update_nonparametric(g, feats, [0, 0])
    assert_allclose(out.C[0], [0.70710678, 0.70710678], atol=1e-8)
    out = update_nonparametric(g, np.tile(feats[:1], (2, 1)), [1, 1])
    assert_allclose(out.C[1], feats[0])
    assert g.C[0, 1] == 1.0


def test_update_nonparametric_unit_rows(rng):
    g = PrototypeGroup(unit_rows(rng, 4, 6))
    out = update_nonparametric(g, unit_rows(rng, 30, 6), rng.integers(0, 4, 30))
    assert_allclose(np.linalg.norm(out.C, axis=1), 1.0, atol=1e-10)


def test_grad_zero_when_q_equals_p(rng):
    g = PrototypeGroup(unit_rows(rng, 3, 4), tau=0.5)
    f = unit_rows(rng, 5, 4)
    p = probs(g, f)
    _, gc, gf = grad_parametric(g, f, p)
    assert_allclose(gc, 0.0, atol=1e-14)
    assert_allclose(gf, 0.0, atol=1e-14)


def test_grad_rejects_non_distribution(rng):
    g = PrototypeGroup(unit_rows(rng, 2, 3))
    f = unit_rows(rng, 4, 3)
    with pytest.raises(NotADistribution):
        grad_parametric(g, f, 2 * probs(g, f))


def test_grad_single_sample_finite_difference():
    rng = np.random.default_rng(0)
    C, f = unit_rows(rng, 2, 3), unit_rows(rng, 1, 3)
    q = np.array([[0.3], [0.7]])
    _, gc, gf = grad_parametric(PrototypeGroup(C, tau=0.5), f, q)
    num_c = central_diff(lambda c: grad_parametric(PrototypeGroup(c, tau=0.5), f, q)[0], C)
    num_f = central_diff(lambda x: grad_parametric(PrototypeGroup(C, tau=0.5), x, q)[0], f)
    assert_allclose(gc, num_c, atol=1e-6)
    assert_allclose(gf, num_f, atol=1e-6)


def test_grad_random_finite_difference():
    rng = np.random.default_rng(1)
    for _ in range(100):
        k, n, d = rng.integers(1, 5), rng.integers(1, 6), rng.integers(2, 5)
        tau = float(rng.uniform(0.2, 1.0))
        C, f = unit_rows(rng, k, d), unit_rows(rng, n, d)
        q = rng.dirichlet(np.ones(k), size=n).T
        _, gc, gf = grad_parametric(PrototypeGroup(C, tau), f, q)
        num_c = central_diff(lambda c: grad_parametric(PrototypeGroup(c, tau), f, q)[0], C)
        num_f = central_diff(lambda x: grad_parametric(PrototypeGroup(C, tau), x, q)[0], f)
        assert rel_err(gc, num_c) < 1e-4
        assert rel_err(gf, num_f) < 1e-4


def test_sgd_prototypes_renormalizes(rng):
    g = PrototypeGroup(unit_rows(rng, 3, 4))
    out = sgd_prototypes(g, rng.standard_normal((3, 4)), 0.5)
    assert_allclose(np.linalg.norm(out.C, axis=1), 1.0, atol=1e-12)
    frozen = PrototypeGroup(g.C, mode="nonparametric")
    assert sgd_prototypes(frozen, np.ones((3, 4)), 1.0) is frozen
