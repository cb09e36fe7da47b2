import numpy as np
import pytest

from oracles import one_by_one_dual_value, sinkhorn_reference, symmetric_2x2_value, tsallis_div_direct
from tsallis_ot.errors import NotConvergedWarning
from tsallis_ot.measures import Coupling, CostMatrix, DiscreteMeasure, build_cost, product_measure
from tsallis_ot.solver import (
    DualPotentials,
    SolveConfig,
    dual_objective,
    primal_objective,
    round_to_polytope,
    sinkhorn_kl,
    solve_dual,
    solve_primal,
)


def unif(pts):
    return DiscreteMeasure.uniform(np.asarray(pts, dtype=float))


def random_instance(rng, m, n, d=2):
    mu = DiscreteMeasure(rng.random((m, d)), rng.dirichlet(np.ones(m)) * 0.9 + 0.1 / m)
    nu = DiscreteMeasure(rng.random((n, d)), rng.dirichlet(np.ones(n)) * 0.9 + 0.1 / n)
    return mu, nu, build_cost(mu, nu, "lp_power", 2)


TWO = unif([0.0, 1.0])
SWAP = CostMatrix([[0.0, 1.0], [1.0, 0.0]])


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(0.0)
    with pytest.raises(ValueError):
        SolveConfig(1.0, tol_gap=0)
    with pytest.raises(ValueError):
        SolveConfig(1.0, q=0.9)


def test_potentials_must_be_finite():
    with pytest.raises(ValueError):
        DualPotentials([np.inf], [0.0])


# primal objective


def test_primal_objective_single_atom():
    mu, nu = unif([0.0]), unif([3.0])
    c = build_cost(mu, nu, "l1_sum")
    for eps in (0.01, 1.0, 100.0):
        assert primal_objective(product_measure(mu, nu), c, SolveConfig(eps)) == 3.0


def test_primal_objective_at_product_is_transport_cost():
    rng = np.random.default_rng(0)
    mu, nu, c = random_instance(rng, 4, 3)
    pi = product_measure(mu, nu)
    expected = float(mu.weights @ c.values @ nu.weights)
    assert primal_objective(pi, c, SolveConfig(0.7, 1.5)) == pytest.approx(expected, rel=1e-14)


def test_primal_objective_identity_plan():
    pi = Coupling(np.diag([0.5, 0.5]), TWO, TWO)
    # D_2 = sum pi^2 / ref - 1 = 2 * 0.25 / 0.25 - 1 = 1
    assert primal_objective(pi, SWAP, SolveConfig(1.0, 2.0)) == pytest.approx(1.0, rel=1e-15)


def test_primal_objective_infinite_off_support():
    mu = DiscreteMeasure([0.0, 1.0], [1.0, 0.0])
    pi = Coupling(np.array([[0.5, 0.0], [0.0, 0.5]]), TWO, mu, check=False)
    assert primal_objective(pi, SWAP, SolveConfig(1.0)) == np.inf


# dual objective


def test_dual_objective_zero_potentials():
    c = CostMatrix(np.zeros((2, 2)))
    for eps in (0.1, 1.0, 3.0):
        h = DualPotentials(np.zeros(2), np.zeros(2))
        assert dual_objective(h, c, SolveConfig(eps, 2.0), TWO, TWO) == pytest.approx(-eps / 4, rel=1e-15)


def test_dual_objective_flat_region():
    # (a - c)/eps <= -1/(q-1) everywhere, so the conjugate term vanishes
    a, eps = 0.3, 0.1
    c = CostMatrix([[0.5, 0.9], [0.41, 2.0]])
    h = DualPotentials(np.full(2, a), np.zeros(2))
    assert dual_objective(h, c, SolveConfig(eps, 2.0), TWO, TWO) == a


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0])
@pytest.mark.parametrize("eps", [0.05, 1.0])
def test_one_by_one_dual_matches_scalar_oracle(q, eps):
    mu, nu = unif([0.0]), unif([0.7])
    c = build_cost(mu, nu, "l1_sum")
    cfg = SolveConfig(eps, q)
    oracle = one_by_one_dual_value(q, eps, 0.7)
    assert oracle == pytest.approx(0.7, abs=1e-9)
    rep = solve_dual(c, mu, nu, cfg)
    assert rep.dual_value == pytest.approx(oracle, abs=1e-9)
    assert rep.primal_value == pytest.approx(0.7, abs=1e-12)
    assert rep.gap <= cfg.tol_gap


# solvers on hand instances


@pytest.mark.parametrize("solver", [solve_dual, solve_primal])
def test_single_atom_instances(solver):
    mu, nu = unif([[0.0, 0.0]]), unif([[1.0, 2.0]])
    c = build_cost(mu, nu, "l1_sum")
    rep = solver(c, mu, nu, SolveConfig(0.3, 2.0))
    assert rep.converged and rep.primal_value == pytest.approx(3.0, abs=1e-12)
    rep = sinkhorn_kl(c, mu, nu, SolveConfig(0.3, 1.0))
    assert rep.converged and rep.primal_value == pytest.approx(3.0, abs=1e-12)


@pytest.mark.parametrize("q", [1.2, 1.5, 2.0, 3.0])
@pytest.mark.parametrize("eps", [0.1, 0.5, 2.0])
def test_symmetric_2x2_matches_golden_section(q, eps):
    _, oracle = symmetric_2x2_value(q, eps)
    cfg = SolveConfig(eps, q, tol_gap=1e-10)
    assert solve_dual(SWAP, TWO, TWO, cfg).primal_value == pytest.approx(oracle, abs=1e-6)
    assert solve_primal(SWAP, TWO, TWO, cfg).primal_value == pytest.approx(oracle, abs=1e-6)


def test_symmetric_2x2_hand_value():
    # t* = 1/4 + 1/(16 eps) for q = 2; at eps = 1/2 the value is 3/8
    assert solve_dual(SWAP, TWO, TWO, SolveConfig(0.5, 2.0, tol_gap=1e-12)).primal_value == pytest.approx(0.375, abs=1e-10)


def test_large_epsilon_gives_product_plan():
    rep = solve_dual(SWAP, TWO, TWO, SolveConfig(1e3, 2.0))
    np.testing.assert_allclose(rep.coupling.weight_matrix, 0.25, atol=1e-3)
    rep = sinkhorn_kl(SWAP, TWO, TWO, SolveConfig(1e3, 1.0))
    np.testing.assert_allclose(rep.coupling.weight_matrix, 0.25, atol=1e-3)


def test_q_above_two_is_flagged():
    rep = solve_dual(SWAP, TWO, TWO, SolveConfig(0.5, 3.0))
    assert rep.converged and rep.flags
    assert not solve_dual(SWAP, TWO, TWO, SolveConfig(0.5, 2.0)).flags


def test_nonconvergence_is_reported():
    rng = np.random.default_rng(1)
    mu, nu, c = random_instance(rng, 10, 10)
    with pytest.warns(NotConvergedWarning):
        rep = solve_dual(c, mu, nu, SolveConfig(0.001, 1.5, max_iter=2))
    assert not rep.converged and rep.iterations == 2


# cross-validation


@pytest.mark.parametrize("q", [1.5, 2.0])
@pytest.mark.parametrize("eps", [0.01, 0.1, 1.0])
def test_primal_and_dual_agree(q, eps):
    rng = np.random.default_rng(int(q * 10 + eps * 1000))
    for _ in range(3):
        mu, nu, c = random_instance(rng, 10, 10)
        cfg = SolveConfig(eps, q)
        d, p = solve_dual(c, mu, nu, cfg), solve_primal(c, mu, nu, cfg)
        assert d.converged and p.converged
        assert abs(d.primal_value - p.primal_value) <= 2 * cfg.tol_gap * abs(d.primal_value)


def test_kl_dispatch_matches_textbook_sinkhorn():
    rng = np.random.default_rng(7)
    for _ in range(5):
        mu, nu, c = random_instance(rng, 5, 5)
        ref, P_ref = sinkhorn_reference(c.values, mu.weights, nu.weights, 0.2)
        cfg = SolveConfig(0.2, 1.0, tol_gap=1e-12)
        for rep in (solve_primal(c, mu, nu, cfg), solve_dual(c, mu, nu, cfg), sinkhorn_kl(c, mu, nu, cfg)):
            assert rep.primal_value == pytest.approx(ref, rel=1e-7)
            np.testing.assert_allclose(rep.coupling.weight_matrix, P_ref, atol=1e-7)


def test_sinkhorn_marginals():
    rng = np.random.default_rng(8)
    mu, nu, c = random_instance(rng, 3, 3)
    rep = sinkhorn_kl(c, mu, nu, SolveConfig(0.05, 1.0))
    P = rep.coupling.weight_matrix
    assert np.max(np.abs(P.sum(1) - mu.weights)) <= 1e-9
    assert np.max(np.abs(P.sum(0) - nu.weights)) <= 1e-9


def test_sinkhorn_rejects_tsallis():
    with pytest.raises(ValueError):
        sinkhorn_kl(SWAP, TWO, TWO, SolveConfig(1.0, 2.0))


# invariants


def test_weak_duality_along_the_path():
    rng = np.random.default_rng(9)
    mu, nu, c = random_instance(rng, 8, 6)
    cfg = SolveConfig(0.05, 1.5)
    rep = solve_dual(c, mu, nu, cfg)
    assert rep.converged
    # every visited dual value lies below the final primal value and below any feasible plan
    feasible = [rep.coupling, product_measure(mu, nu)]
    for k in range(20):
        P = round_to_polytope(rng.random((8, 6)), mu.weights, nu.weights)
        feasible.append(Coupling(P, mu, nu, check=False))
    best = min(primal_objective(pi, c, cfg) for pi in feasible)
    assert max(rep.dual_history) <= best + 1e-12


@pytest.mark.parametrize("q", [1.0, 1.3, 2.0, 3.0])
def test_dual_ascent_is_monotone(q):
    rng = np.random.default_rng(10)
    mu, nu, c = random_instance(rng, 12, 9)
    rep = solve_dual(c, mu, nu, SolveConfig(0.02, q, tol_gap=1e-9))
    h = np.array(rep.dual_history)
    assert np.all(np.diff(h) >= -1e-12 * max(1.0, np.abs(h).max()))


def test_unique_minimiser_from_different_starts():
    rng = np.random.default_rng(11)
    mu, nu, c = random_instance(rng, 7, 7)
    cfg = SolveConfig(0.05, 2.0, tol_gap=1e-11)
    a = solve_dual(c, mu, nu, cfg)
    start = DualPotentials(rng.normal(size=7), rng.normal(size=7))
    b = solve_dual(c, mu, nu, cfg, init=start)
    np.testing.assert_allclose(a.coupling.weight_matrix, b.coupling.weight_matrix, atol=1e-6)


def test_value_nondecreasing_in_epsilon():
    rng = np.random.default_rng(12)
    mu, nu, c = random_instance(rng, 10, 8)
    for q in (1.5, 2.0):
        vals = [solve_dual(c, mu, nu, SolveConfig(2.0**-k, q, tol_gap=1e-9)).primal_value for k in range(0, 8)]
        assert all(x >= y - 1e-8 for x, y in zip(vals, vals[1:]))


def test_near_one_agrees_with_sinkhorn():
    rng = np.random.default_rng(13)
    for _ in range(5):
        mu, nu, c = random_instance(rng, 5, 5)
        a = solve_dual(c, mu, nu, SolveConfig(0.1, 1 + 1e-6))
        b = sinkhorn_kl(c, mu, nu, SolveConfig(0.1, 1.0))
        assert a.primal_value == pytest.approx(b.primal_value, rel=1e-4)


def test_sparse_plan_for_q_two():
    # Tsallis plans have exact zeros where h1 + h2 - c < -eps/(q-1)
    rng = np.random.default_rng(14)
    mu, nu, c = random_instance(rng, 20, 20)
    rep = solve_dual(c, mu, nu, SolveConfig(0.01, 2.0))
    assert np.mean(rep.coupling.weight_matrix == 0) > 0.3


def test_primal_matches_divergence_oracle():
    rng = np.random.default_rng(15)
    mu, nu, c = random_instance(rng, 4, 5)
    rep = solve_dual(c, mu, nu, SolveConfig(0.2, 1.5))
    P = rep.coupling.weight_matrix
    direct = float(np.sum(c.values * P)) + 0.2 * tsallis_div_direct(1.5, P, np.outer(mu.weights, nu.weights))
    assert rep.primal_value == pytest.approx(direct, rel=1e-12)


def test_round_to_polytope_is_feasible():
    rng = np.random.default_rng(16)
    for _ in range(100):
        a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(4))
        P = round_to_polytope(rng.random((6, 4)), a, b)
        assert P.min() >= 0
        np.testing.assert_allclose(P.sum(1), a, atol=1e-15)
        np.testing.assert_allclose(P.sum(0), b, atol=1e-15)
