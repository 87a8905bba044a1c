import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from _oracles import chain_table, discrete_h2
from rhomix.families import categorical, exponential, gaussian
from rhomix.hmm import (HmmParams, ModelBudgetError, build_hmm_model, chain_density_bruteforce,
                        default_step, delta_for, model_from_json, model_to_json, param_error,
                        product_chain_density, simplex_grid, stationary_distribution,
                        transition_grid, vbar_exponential_family, vbar_for_nets, window)
from rhomix.measure import SampleSpace, hellinger2

B2 = SampleSpace.discrete([0, 1])
B3 = SampleSpace.discrete([0, 1, 2])


def cat_emissions(rng, K, space):
    return [categorical(space, rng.dirichlet(np.ones(len(space.atoms)))) for _ in range(K)]


def test_window_examples():
    ws = window([1.0, 2.0, 3.0, 4.0], 2)
    assert ws.sample.points.tolist() == [[1, 2], [2, 3], [3, 4]]
    assert window(np.arange(10.0), 3).n == 8
    window(np.arange(10.0), 5)
    with pytest.raises(ValueError):
        window(np.arange(10.0), 6)
    with pytest.raises(ValueError):
        window(np.arange(10.0), 1)


def test_degenerate_chain_densities():
    f1, f2 = exponential(1.0), exponential(3.0)
    d = product_chain_density(HmmParams([1, 0], np.eye(2), [f1, f2]), 2)
    x = np.array([[0.3, 1.7], [2.0, 0.1]])
    assert np.allclose(d.logpdf(x), f1.logpdf(x[:, 0]) + f1.logpdf(x[:, 1]), atol=1e-14)
    Q = np.array([[0.3, 0.7], [0.6, 0.4]])
    d2 = product_chain_density(HmmParams([0.2, 0.8], Q, [f2, f2]), 3)
    y = np.array([[0.5, 1.0, 2.0]])
    assert d2.logpdf(y)[0] == pytest.approx(float(np.sum(f2.logpdf(y[0]))), abs=1e-13)


def test_forward_matches_bruteforce_k2_l2():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = HmmParams(rng.dirichlet([1, 1]), rng.dirichlet([1, 1], 2), cat_emissions(rng, 2, B3))
        pts = rng.integers(0, 3, size=(10, 2)).astype(float)
        fwd = np.exp(product_chain_density(p, 2).logpdf(pts))
        assert np.max(np.abs(fwd - chain_density_bruteforce(p, 2, pts))) <= 1e-14


def test_forward_matches_bruteforce_continuous():
    rng = np.random.default_rng(1)
    for K in (1, 2, 3):
        for L in (2, 3, 4):
            p = HmmParams(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), K),
                          [gaussian(rng.normal(), rng.uniform(0.5, 2)) for _ in range(K)])
            pts = rng.normal(size=(25, L))
            fwd = np.exp(product_chain_density(p, L).logpdf(pts))
            ref = chain_density_bruteforce(p, L, pts)
            assert np.max(np.abs(fwd - ref) / ref) <= 1e-12


def test_chain_density_matches_table_oracle_and_normalizes():
    rng = np.random.default_rng(2)
    emis = cat_emissions(rng, 2, B2)
    p = HmmParams(rng.dirichlet([1, 1]), rng.dirichlet([1, 1], 2), emis)
    E = np.array([e.pdf(np.array([0.0, 1.0])) for e in emis])
    table = chain_table(p.w, p.Q, E, 3)
    d = product_chain_density(p, 3)
    for idx in itertools.product(range(2), repeat=3):
        assert d.pdf(np.array([idx], dtype=float))[0] == pytest.approx(table[idx], abs=1e-15)
    assert d.total_mass() == pytest.approx(1.0, abs=1e-14)


def test_stationary_distribution():
    pi = stationary_distribution(np.array([[0.9, 0.1], [0.2, 0.8]]))
    assert np.allclose(pi, [2 / 3, 1 / 3], atol=1e-15)
    assert np.allclose(stationary_distribution(np.full((3, 3), 1 / 3)), 1 / 3)
    with pytest.raises(ValueError):
        stationary_distribution(np.eye(2))
    with pytest.raises(ValueError):
        stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]]))  # periodic
    rng = np.random.default_rng(3)
    Q = rng.dirichlet(np.ones(4), 4)
    pi = stationary_distribution(Q)
    assert np.max(np.abs(pi @ Q - pi)) <= 1e-12


def test_grids():
    g = simplex_grid(2, 0.1, 0.1)
    assert len(g) == 9
    assert np.allclose(g[0], [0.1, 0.9]) and np.allclose(g[-1], [0.9, 0.1])
    assert len(simplex_grid(2, 0.5, Fraction(1, 2))) == 1
    exact = simplex_grid(3, 0.1, Fraction(1, 10), exact=True)
    assert all(sum(v) == 1 for v in exact)
    assert all(min(v) >= Fraction(1, 10) for v in exact)
    assert len(transition_grid(2, 0.1, 0.1)) == 81
    with pytest.raises(ValueError):
        simplex_grid(2, 0.6, 0.1)


def test_delta_vbar_and_default_step():
    assert delta_for(784, 10000, 2) == pytest.approx(0.0784)
    assert delta_for(1e9, 10, 3) == pytest.approx(1 / 3)
    assert delta_for(500, 500, 2) == 0.5
    assert vbar_for_nets([1], 2) == 1
    assert vbar_for_nets([8, 8], 2) == 28
    assert vbar_exponential_family([1, 1], 2) == 3 * 4 + 2 * 2 * 2
    step = default_step(0.0784)
    assert step <= math.sqrt(0.0784) and Fraction(1, step.denominator - 1) > math.sqrt(0.0784)


def test_build_model_counts_and_budget():
    nets = [[exponential(t) for t in (1.0, 2.0, 4.0)], [exponential(t) for t in (0.5, 1.0, 3.0)]]
    w_grid = simplex_grid(2, 0.1, 0.1)
    q_grid = transition_grid(2, 0.1, 0.1)
    with pytest.raises(ModelBudgetError, match="6561"):
        build_hmm_model(nets, 2, 2, 0.1, step=Fraction(1, 10), w_grid=w_grid, q_grid=q_grid,
                        budget=6000, check=False)
    small = build_hmm_model([[exponential(1.0)], [exponential(2.0)]], 2, 2, 0.5,
                            step=Fraction(1, 2))
    assert len(small) == 1
    hm = build_hmm_model([n[:2] for n in nets], 2, 2, 0.25, step=Fraction(1, 4))
    assert len(hm) == len(simplex_grid(2, 0.25, 0.25)) * len(transition_grid(2, 0.25, 0.25)) * 4
    assert hm.params_of("0").K == 2


def test_discrete_model_candidates_normalize():
    rng = np.random.default_rng(4)
    nets = [cat_emissions(rng, 2, B2), cat_emissions(rng, 2, B2)]
    hm = build_hmm_model(nets, 2, 3, 0.25, step=Fraction(1, 4))
    masses = hm.model.check_normalization()
    assert np.allclose(masses, 1.0, atol=1e-12)


def test_model_json_roundtrip():
    hm = build_hmm_model([[exponential(1.0), exponential(2.0)], [exponential(4.0)]], 2, 2, 0.25,
                         step=Fraction(1, 4), w_mode="stationary")
    back = model_from_json(model_to_json(hm))
    assert back.model.ids == hm.model.ids
    pts = np.array([[0.5, 1.5]])
    for a, b in zip(hm.model, back.model):
        assert a.logpdf(pts)[0] == b.logpdf(pts)[0]


def test_param_error_examples_and_permutation():
    e = [exponential(1.0), exponential(3.0)]
    Q = np.array([[0.8, 0.2], [0.3, 0.7]])
    truth = HmmParams([0.5, 0.5], Q, e)
    assert param_error(truth, truth) == 0.0
    swapped = HmmParams([0.5, 0.5], Q[::-1, ::-1], e[::-1])
    assert param_error(swapped, truth) == 0.0
    est = HmmParams([0.6, 0.4], Q, e)
    assert param_error(est, truth) == pytest.approx(0.02, abs=1e-15)
    # invariance when both arguments are relabelled by the same permutation
    rng = np.random.default_rng(5)
    for _ in range(10):
        K = 3
        fams = [exponential(t) for t in rng.uniform(0.5, 3, K)]
        a = HmmParams(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), K), fams)
        fams_b = [exponential(t) for t in rng.uniform(0.5, 3, K)]
        b = HmmParams(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), K), fams_b)
        s = list(rng.permutation(K))
        pa = HmmParams(a.w[s], a.Q[np.ix_(s, s)], [a.emissions[i] for i in s])
        pb = HmmParams(b.w[s], b.Q[np.ix_(s, s)], [b.emissions[i] for i in s])
        assert param_error(pa, pb) == pytest.approx(param_error(a, b), abs=1e-14)


def chain_bound_sides(rng, K, L, A):
    space = SampleSpace.discrete(range(A))
    def draw():
        return (rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), K),
                rng.dirichlet(np.ones(A), K))
    (w, Q, F), (v, R, G) = draw(), draw()
    P1 = product_chain_density(HmmParams(w, Q, [categorical(space, f) for f in F]), L)
    P2 = product_chain_density(HmmParams(v, R, [categorical(space, g) for g in G]), L)
    lhs = hellinger2(P1, P2)
    rhs = (discrete_h2(w, v) + (L - 1) * max(discrete_h2(Q[k], R[k]) for k in range(K))
           + L * max(discrete_h2(F[k], G[k]) for k in range(K)))
    oracle = discrete_h2(chain_table(w, Q, F, L), chain_table(v, R, G, L))
    return lhs, rhs, oracle


def test_chain_h2_bound_sample():
    rng = np.random.default_rng(6)
    for _ in range(30):
        lhs, rhs, oracle = chain_bound_sides(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)), 2)
        assert lhs == pytest.approx(oracle, abs=1e-13)
        assert lhs <= rhs + 1e-12
