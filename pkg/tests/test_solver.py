import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrtrain.errors import CapacityError, ConfigError, DataError
from hrtrain.solver import (
    BatchLosses,
    HRParams,
    HRWeights,
    hr_loss_value,
    kl_inner,
    oracle_solve,
    solve_weights,
    solve_weights_budget_search,
    tv_outer,
)
from conftest import phi_grid_value


def batch(adv, worst=None):
    adv = np.asarray(adv, dtype=float)
    return BatchLosses(adv, float(adv.max()) if worst is None else worst)


def random_instance(rng, n_max=6):
    n = int(rng.integers(1, n_max + 1))
    adv = rng.uniform(0, 5, n)
    return batch(adv, float(adv.max() + rng.uniform(0, 2)))


# ---------------------------------------------------------------------------
# solve_weights examples

def test_mean_reduction_at_zero_knobs():
    L = batch([1.0, 2.0, 3.0], worst=3.0)
    w = solve_weights(L, 0.0, 0.0)
    assert np.allclose(w.d, [0.0, 1 / 3, 1 / 3, 1 / 3], atol=0)
    assert hr_loss_value(L, w) == pytest.approx(2.0, abs=1e-12)


def test_half_removal_example():
    # removing mass 1/2 from the loss-1 sample is optimal; enumeration agrees
    L = batch([1.0, 2.0], worst=4.0)
    w = solve_weights(L, 0.5, 0.0)
    assert np.allclose(w.d, [0.5, 0.0, 0.5], atol=1e-12)
    assert hr_loss_value(L, w) == pytest.approx(3.0, abs=1e-12)
    w_oracle = oracle_solve(L, 0.5, 0.0)
    assert hr_loss_value(L, w_oracle) == pytest.approx(3.0, abs=1e-6)


def test_kl_only_value_between_mean_and_worst():
    L = batch([0.0, 1.0], worst=1.0)
    w = solve_weights(L, 0.0, 0.1)
    value = hr_loss_value(L, w)
    assert 0.5 < value < 1.0
    dhat = np.array([0.0, 0.5, 0.5])
    assert value == pytest.approx(phi_grid_value(dhat, L.vector, 0.1), abs=1e-9)


def test_full_budget_concentrates_on_worst():
    L = batch([0.3, 2.2, 1.1], worst=2.9)
    w = solve_weights(L, 1.0, 0.0)
    assert np.allclose(w.d, [1.0, 0, 0, 0], atol=0)
    assert hr_loss_value(L, w) == pytest.approx(2.9)


# ---------------------------------------------------------------------------
# kl_inner

def test_kl_inner_r_zero_identity():
    L = batch([1.0, 3.0], worst=3.5)
    dhat = np.array([0.2, 0.5, 0.3])
    d, value = kl_inner(dhat, L, 0.0)
    assert np.array_equal(d, dhat)
    assert value == pytest.approx(float(dhat @ L.vector))


def test_kl_inner_concentrated_on_max_atom():
    L = batch([1.0, 2.0], worst=2.0)
    dhat = np.array([0.0, 0.0, 1.0])  # all mass on the loss-2 sample == worst level
    for r in (0.05, 0.7, 5.0):
        d, value = kl_inner(dhat, L, r)
        assert np.array_equal(d, dhat)
        assert value == pytest.approx(2.0)


def test_kl_inner_uniform_matches_grid_oracle():
    L = batch([0.0, 1.0], worst=1.0)
    dhat = np.array([0.0, 0.5, 0.5])
    d, value = kl_inner(dhat, L, np.log(2))
    expected = phi_grid_value(dhat, L.vector, np.log(2))
    assert value == pytest.approx(expected, abs=1e-9)
    # closed form for this instance: 1/2 + sqrt(3)/4
    assert value == pytest.approx(0.5 + np.sqrt(3) / 4, abs=1e-9)
    assert d[0] == pytest.approx(0.0, abs=1e-12)


def test_kl_inner_matches_grid_on_random_instances(rng):
    for _ in range(60):
        L = random_instance(rng)
        n = L.n
        raw = rng.uniform(size=n + 1)
        raw[0] *= rng.integers(0, 2)  # sometimes no mass on the worst atom
        dhat = raw / raw.sum()
        r = float(rng.choice([0.0, 0.03, 0.2, 1.0, 3.0]))
        _, value = kl_inner(dhat, L, r)
        assert value == pytest.approx(phi_grid_value(dhat, L.vector, r), abs=2e-8)


def test_kl_inner_huge_radius_concentrates_on_worst_atom():
    L = batch([0.5, 1.0], worst=3.0)
    dhat = np.array([0.0, 0.5, 0.5])
    d, value = kl_inner(dhat, L, 60.0)
    assert value == pytest.approx(3.0, rel=1e-6)
    assert d[0] == pytest.approx(1.0, rel=1e-6)


def test_kl_inner_rejects_negative_radius():
    L = batch([1.0], worst=1.0)
    with pytest.raises(ConfigError):
        kl_inner(np.array([0.5, 0.5]), L, -0.1)


# ---------------------------------------------------------------------------
# tv_outer

def test_tv_outer_zero_budget_uniform():
    L = batch([5.0, 1.0, 3.0])
    dhat, s = tv_outer(L, 0.0)
    assert np.array_equal(s, np.zeros(3))
    assert dhat[0] == 0.0
    assert np.array_equal(dhat[1:], np.full(3, 1 / 3))


def test_tv_outer_ties_remove_lowest_index():
    L = batch([1.0, 1.0, 1.0, 1.0])
    dhat, s = tv_outer(L, 0.25)
    assert np.allclose(s, [0.25, 0, 0, 0])
    assert dhat[0] == pytest.approx(0.25)
    assert np.allclose(dhat[1:], [0.0, 0.25, 0.25, 0.25])


def test_tv_outer_fractional_remainder():
    L = batch([1.0, 2.0], worst=4.0)
    dhat, s = tv_outer(L, 0.75)
    assert np.allclose(s, [0.5, 0.25])
    assert np.allclose(dhat, [0.75, 0.0, 0.25])


def test_tv_outer_budget_fully_used(rng):
    for _ in range(40):
        L = random_instance(rng)
        alpha = float(rng.uniform(0, 1))
        dhat, s = tv_outer(L, alpha)
        assert s.sum() == pytest.approx(alpha, abs=1e-12)
        assert dhat[0] == pytest.approx(alpha, abs=1e-12)
        assert dhat.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(dhat[1:] + s - 1.0 / L.n == pytest.approx(0.0, abs=1e-15))


# ---------------------------------------------------------------------------
# oracle and fallback

def test_oracle_reductions():
    L = batch([2.0, 0.5, 1.5], worst=3.0)
    assert hr_loss_value(L, oracle_solve(L, 0.0, 0.0)) == pytest.approx(4.0 / 3)
    assert hr_loss_value(L, oracle_solve(L, 1.0, 0.0)) == pytest.approx(3.0, abs=1e-9)


def test_oracle_capacity_limit():
    L = batch(np.ones(11))
    with pytest.raises(CapacityError):
        oracle_solve(L, 0.1, 0.1)


def test_budget_search_agrees_with_solver(rng):
    for _ in range(50):
        L = random_instance(rng)
        alpha = float(rng.choice([0.0, 0.1, 0.3, 0.7]))
        r = float(rng.choice([0.0, 0.05, 0.4]))
        v1 = hr_loss_value(L, solve_weights(L, alpha, r))
        v2 = hr_loss_value(L, solve_weights_budget_search(L, alpha, r))
        assert v2 == pytest.approx(v1, rel=1e-8, abs=1e-10)


# ---------------------------------------------------------------------------
# invariants

def check_feasible(L, w, alpha, r):
    assert w.d.min() >= -1e-12 and w.dhat.min() >= -1e-12 and w.s.min() >= -1e-12
    assert abs(w.d.sum() - 1) < 1e-8 and abs(w.dhat.sum() - 1) < 1e-8
    assert np.all(np.abs(w.dhat[1:] + w.s - 1.0 / L.n) < 1e-10)
    assert w.s.sum() <= alpha + 1e-10
    assert w.kl_gap() <= r + 1e-7


def test_feasibility_invariants(rng):
    for _ in range(300):
        L = random_instance(rng)
        alpha = float(rng.uniform(0, 1))
        r = float(rng.uniform(0, 2))
        w = solve_weights(L, alpha, r)
        check_feasible(L, w, alpha, r)
        value = hr_loss_value(L, w)
        assert value >= float(np.mean(L.adv)) - 1e-9
        assert value <= L.worst + 1e-9


def test_monotonicity_in_alpha_and_r(rng):
    alphas = [0.0, 0.05, 0.1, 0.3, 0.6, 1.0]
    rs = [0.0, 0.02, 0.1, 0.5, 2.0]
    for _ in range(50):
        L = random_instance(rng)
        r = float(rng.uniform(0, 0.5))
        vals = [hr_loss_value(L, solve_weights(L, a, r)) for a in alphas]
        assert all(b >= a - 1e-10 for a, b in zip(vals, vals[1:]))
        alpha = float(rng.uniform(0, 1))
        vals = [hr_loss_value(L, solve_weights(L, alpha, rr)) for rr in rs]
        assert all(b >= a - 1e-10 for a, b in zip(vals, vals[1:]))


def test_scale_equivariance(rng):
    for _ in range(40):
        L = random_instance(rng)
        alpha = float(rng.uniform(0, 0.8))
        r = float(rng.uniform(0, 1))
        c = float(rng.uniform(0.5, 2.0))
        w1 = solve_weights(L, alpha, r)
        L2 = BatchLosses(L.adv * c, L.worst * c)
        w2 = solve_weights(L2, alpha, r)
        assert hr_loss_value(L2, w2) == pytest.approx(c * hr_loss_value(L, w1), rel=1e-9)
        assert np.all(np.abs(w1.d - w2.d) < 1e-8)


def test_higher_loss_never_lighter_weight(rng):
    for _ in range(80):
        L = random_instance(rng)
        w = solve_weights(L, float(rng.uniform(0, 0.5)), float(rng.uniform(0, 1)))
        d = w.d[1:]
        dhat = w.dhat[1:]
        for i in range(L.n):
            for j in range(L.n):
                if dhat[i] == dhat[j] and L.adv[i] > L.adv[j]:
                    assert d[i] >= d[j] - 1e-12


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_property_solver_beats_every_oracle_candidate(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(1, 6))
    adv = g.uniform(0, 5, n)
    L = BatchLosses(adv, float(adv.max() + g.uniform(0, 2)))
    alpha = float(g.choice([0.0, 0.05, 0.2, 0.5]))
    r = float(g.choice([0.0, 0.05, 0.2, 0.5]))
    v = hr_loss_value(L, solve_weights(L, alpha, r))
    v_oracle = hr_loss_value(L, oracle_solve(L, alpha, r))
    assert abs(v - v_oracle) / (1 + abs(v_oracle)) < 1e-5


# ---------------------------------------------------------------------------
# errors and types

def test_parameter_validation():
    L = batch([1.0, 2.0])
    with pytest.raises(ConfigError):
        solve_weights(L, -0.1, 0.0)
    with pytest.raises(ConfigError):
        solve_weights(L, 1.1, 0.0)
    with pytest.raises(ConfigError):
        solve_weights(L, 0.0, -1e-9)
    with pytest.raises(ConfigError):
        HRParams(alpha=2.0)


def test_nan_losses_rejected():
    with pytest.raises(DataError):
        BatchLosses(np.array([1.0, np.nan]), 2.0)
    with pytest.raises(DataError):
        BatchLosses(np.array([1.0, 2.0]), np.inf)
    with pytest.raises(DataError):
        BatchLosses(np.array([1.0, 2.0]), 1.5)  # worst below max


def test_hr_weights_validation():
    with pytest.raises(ConfigError):
        HRWeights(d=np.array([0.5, 0.5]), dhat=np.array([1.0, 0.0]), s=np.array([0.2, 0.1]))
    with pytest.raises(ConfigError):
        HRWeights(d=np.array([-0.5, 1.5]), dhat=np.array([1.0, 0.0]), s=np.array([0.0]))


def test_hr_loss_value_trivial():
    L = batch([1.0, 2.0, 3.0])
    w = HRWeights(
        d=np.array([0.0, 1 / 3, 1 / 3, 1 / 3]),
        dhat=np.array([0.0, 1 / 3, 1 / 3, 1 / 3]),
        s=np.zeros(3),
    )
    assert hr_loss_value(L, w) == pytest.approx(2.0)
    L7 = batch([1.0, 2.0], worst=7.0)
    w7 = HRWeights(d=np.array([1.0, 0, 0]), dhat=np.array([1.0, 0, 0]), s=np.full(2, 0.5))
    assert hr_loss_value(L7, w7) == pytest.approx(7.0)


# ---------------------------------------------------------------------------
# independent conic-program cross-check (optional dependency)

def test_kl_inner_against_exponential_cone_program(rng):
    cp = pytest.importorskip("cvxpy")
    for _ in range(8):
        L = random_instance(rng, n_max=5)
        n = L.n
        alpha = float(rng.choice([0.0, 0.2, 0.5]))
        r = float(rng.choice([0.05, 0.3]))
        vec = L.vector
        d = cp.Variable(n + 1, nonneg=True)
        dhat = cp.Variable(n + 1, nonneg=True)
        s = cp.Variable(n, nonneg=True)
        cons = [
            cp.sum(d) == 1,
            cp.sum(dhat) == 1,
            dhat[1:] + s == 1.0 / n,
            cp.sum(s) <= alpha,
            cp.sum(cp.kl_div(dhat, d)) <= r,  # sum dhat log(dhat/d) - dhat + d <= r given sums equal
        ]
        prob = cp.Problem(cp.Maximize(d @ vec), cons)
        prob.solve(solver="CLARABEL")
        assert prob.status in ("optimal", "optimal_inaccurate")
        mine = hr_loss_value(L, solve_weights(L, alpha, r))
        assert mine == pytest.approx(prob.value, rel=2e-5, abs=2e-5)
