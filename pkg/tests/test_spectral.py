import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conecover.errors import BudgetExceeded, NonPositiveTestFunction, SingularCollapse, ZeroMatrix
from conecover.generating import analyze
from conecover.generators import (
    constant_backward_graph,
    halfline_critical,
    homesick_graph,
    homogeneous_tree,
    oscillating_growth,
    two_sided_line,
)
from conecover.graph import FiniteGraph, expand_multiedges, validate_spec
from conecover.spectral import (
    admissible_lambda,
    classify_rwdcre,
    constant_sampler,
    count_levels,
    cw_certify,
    discrete_sampler,
    ergodicity_verdict,
    halfline_test_function,
    lyapunov_top,
    perron_value,
    r_inf_proxy,
    spectral_report,
    truncated_pf,
)

from _oracles import enumerate_levels, exact_abs_walk_expectation
from _strategies import finite_specs, out_lists


def dense_pf(mat):
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


# --- truncated Perron values


def test_line_adjacency_approaches_two():
    assert 1.99 <= truncated_pf(two_sided_line(), "A", 50) <= 2.0


def test_halfline_adjacency_increases_to_two():
    g = halfline_critical()
    vals = [truncated_pf(g, "A", r, tol=1e-12) for r in (10, 20, 50)]
    assert vals == sorted(vals)
    assert all(v < 2.0 for v in vals)
    # path on R+1 vertices: 2 cos(pi / (R + 2))
    for r, v in zip((10, 20, 50), vals):
        assert v == pytest.approx(2 * math.cos(math.pi / (r + 2)), abs=1e-9)


def test_homogeneous_tree_row_sum():
    g = homogeneous_tree(2, 0.25)
    assert truncated_pf(g, "M", 5) == pytest.approx(3.0, abs=1e-10)


def test_entropy_example_pf(entropy_graph):
    lam = truncated_pf(entropy_graph, "M", 5, tol=1e-13)
    assert lam > 1
    assert lam == pytest.approx(dense_pf(entropy_graph.matrix("M")), abs=1e-9)


def test_periodic_matrix():
    # bipartite 2-cycle: eigenvalues +-sqrt(6)
    est = perron_value(np.array([[0.0, 2.0], [3.0, 0.0]]))
    assert est.value == pytest.approx(math.sqrt(6), abs=1e-9)
    assert est.lower <= est.value <= est.upper


def test_zero_matrix():
    with pytest.raises(ZeroMatrix):
        perron_value(np.zeros((3, 3)))


@settings(max_examples=40, deadline=None)
@given(spec=finite_specs())
def test_pf_matches_dense_solver(spec):
    g = validate_spec(spec)
    lam = truncated_pf(g, "M", len(g), tol=1e-13)
    assert lam == pytest.approx(dense_pf(g.matrix("M")), rel=1e-8)


def test_truncation_monotone_in_radius():
    g = halfline_critical()
    vals = [truncated_pf(g, "M", r, tol=1e-12) for r in (1, 2, 5, 10, 20, 50)]
    assert all(b >= a - 1e-10 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 3.5])
def test_homesick_scaling(lam):
    base = validate_spec(expand_multiedges({
        "root": "a", "vertices": ["a", "b"], "backward": {"a": 0.5, "b": 0.5},
        "edges": [{"from": "a", "to": "b", "pg": 0.5}, {"from": "a", "to": "a", "pg": 0.5},
                  {"from": "b", "to": "a", "pg": 1.0}],
    }))
    g = homesick_graph(base, lam)
    assert truncated_pf(g, "M", 5, tol=1e-13) == pytest.approx(truncated_pf(g, "A", 5, tol=1e-13) / lam, abs=1e-10)


# --- Collatz-Wielandt certificates


def test_halfline_certificate():
    res = cw_certify(halfline_critical(), halfline_test_function, 1.0, 200, sup_bound=1.0)
    assert res.success and res.margin >= 0
    assert res.complement_unchecked


def test_line_certificate_margin_zero():
    res = cw_certify(two_sided_line(), lambda i: 1.0, 2.0, 30, matrix="A")
    assert res.success
    assert res.margin == pytest.approx(0.0, abs=1e-15)


def test_line_refutation():
    res = cw_certify(two_sided_line(), lambda i: 1.0, 2.1, 30, matrix="A")
    assert not res.success
    assert res.deficit == pytest.approx(0.1, abs=1e-12)


def test_nonpositive_test_function():
    with pytest.raises(NonPositiveTestFunction):
        cw_certify(halfline_critical(), lambda i: 0.0, 1.0, 5)


@settings(max_examples=30, deadline=None)
@given(spec=finite_specs(), delta=st.floats(1e-6, 1.0))
def test_cw_row_sum_bounds(spec, delta):
    g = validate_spec(spec)
    sums = [sum(x for _, x in g.m_row(i)) for i in g.vertices]
    assert cw_certify(g, lambda i: 1.0, min(sums), len(g)).success
    assert not cw_certify(g, lambda i: 1.0, max(sums) + delta, len(g)).success


# --- level counts


def test_binary_tree_levels():
    assert count_levels(homogeneous_tree(2, 0.3), 10).counts == [2**n for n in range(11)]


def test_entropy_example_levels(entropy_graph):
    edges = {"i0": ["i1", "i2"], "i1": ["i0"], "i2": ["i1"]}
    expected = enumerate_levels(edges, "i0", 10)
    assert expected[:7] == [1, 2, 2, 3, 4, 5, 7]
    assert count_levels(entropy_graph, 10).counts == expected


@settings(max_examples=30, deadline=None)
@given(spec=finite_specs())
def test_levels_match_enumeration(spec):
    g = validate_spec(spec)
    assert count_levels(g, 10).counts == enumerate_levels(out_lists(spec), spec["root"], 10)


def test_oscillating_gap():
    lc = count_levels(oscillating_growth(), 32)
    r = lc.roots
    assert r[7] >= 1.3 * r[31]
    tsv = lc.to_tsv().splitlines()
    assert tsv[0] == "n\tcount\troot" and len(tsv) == 34


def test_budget_exceeded_carries_partial():
    with pytest.raises(BudgetExceeded) as exc:
        count_levels(oscillating_growth(), 32, budget=10)
    part = exc.value.partial
    assert not part.complete
    assert part.counts == count_levels(oscillating_growth(), len(part.counts) - 1).counts


# --- Lyapunov exponents


def test_lyapunov_identity():
    assert lyapunov_top(constant_sampler(np.eye(2)), 50, 4) == (0.0, 0.0)


def test_lyapunov_constant_diagonal():
    est, err = lyapunov_top(constant_sampler(np.diag([2.0, 0.5])), 100, 3)
    assert est == pytest.approx(math.log(2), abs=1e-12)
    assert err == pytest.approx(0.0, abs=1e-12)


def test_lyapunov_random_sign_paths():
    n = 20
    exact = math.log(2) * exact_abs_walk_expectation(n) / n
    sampler = discrete_sampler([np.diag([2.0, 0.5]), np.diag([0.5, 2.0])])
    est, err = lyapunov_top(sampler, n, 4000, seed=11)
    assert abs(est - exact) <= 3 * err


def test_lyapunov_commuting_diagonal():
    # diag(a, 1) with a in {3, 1/2}: exponent max(E ln a, 0) = E ln a
    sampler = discrete_sampler([np.diag([3.0, 1.0]), np.diag([0.5, 1.0])])
    est, err = lyapunov_top(sampler, 4000, 100, seed=3)
    exact = 0.5 * (math.log(3) + math.log(0.5))
    assert abs(est - exact) <= 3 * err + 1e-3


def test_lyapunov_deterministic():
    sampler = discrete_sampler([np.diag([2.0, 0.5]), np.array([[1.0, 1.0], [0.0, 1.0]])])
    assert lyapunov_top(sampler, 200, 10, seed=9) == lyapunov_top(sampler, 200, 10, seed=9)


def test_lyapunov_collapse():
    with pytest.raises(SingularCollapse):
        lyapunov_top(constant_sampler(np.zeros((2, 2))), 5, 2)


# --- random environments


def _constant_environment_graph(w, v):
    """The cover of Z with constant (omega+, nu) equals the cover of one
    vertex with two loops."""
    return validate_spec(expand_multiedges({
        "root": "z", "vertices": ["z"], "backward": {"z": v},
        "edges": [{"from": "z", "to": "z", "pg": w}, {"from": "z", "to": "z", "pg": 1 - w}],
    }))


@pytest.mark.parametrize("w,v", [(0.5, 0.4), (0.5, 0.6), (0.3, 0.45), (0.8, 0.55), (0.9, 0.3), (0.5, 0.5)])
def test_degenerate_environment_matches_analytic(w, v):
    verdict = classify_rwdcre(([w], [1]), ([v], [1]))
    assert not verdict.monte_carlo
    analytic = analyze(_constant_environment_graph(w, v)).verdict
    expected = "transient" if analytic == "transient" else "recurrent"
    assert verdict.verdict == expected


def test_no_admissible_lambda_is_transient():
    verdict = classify_rwdcre(([0.5], [1]), ([0.2], [1]))
    assert verdict.verdict == "transient" and verdict.case == 1
    assert verdict.gamma is None
    assert admissible_lambda([(0.5, 0.2)]) is None


def test_random_environment_band():
    # admissible lambda only above 1: case 2, Monte Carlo needed
    omega = ([0.1, 0.2], [1, 1])
    nu = ([0.45], [1])
    tight = classify_rwdcre(omega, nu, n=500, trials=50, seed=1)
    assert tight.monte_carlo and tight.case in (2, 3)
    wide = classify_rwdcre(omega, nu, n=500, trials=50, seed=1, band=1e6)
    assert wide.verdict == "inconclusive"
    assert wide.gamma == tight.gamma and wide.threshold == tight.threshold


# --- ergodicity


def test_entropy_example_not_ergodic(entropy_graph):
    assert ergodicity_verdict(entropy_graph, radius=5).verdict == "non_ergodic"


def test_heavy_backward_is_ergodic(entropy_graph):
    g = constant_backward_graph(entropy_graph, 0.75)
    v = ergodicity_verdict(g, radius=5)
    assert v.verdict == "ergodic"
    assert v.r_inf_proxy[-1] == pytest.approx(1 / 3, abs=1e-12)


def test_r_inf_proxy_constant_rows():
    g = FiniteGraph("a", ["a"], {"a": [("a", 1.0)]}, {"a": 0.8})
    assert r_inf_proxy(g, 1, 5) == pytest.approx([0.25] * 5)


def test_halfline_ergodicity_verdict():
    v = ergodicity_verdict(halfline_critical(), radius=50)
    # the truncated Perron value already exceeds 1 (block on {0,1,2}: sqrt(10/9))
    assert v.lambda_lower > 1
    assert v.verdict == "non_ergodic"
    assert not v.whole_graph


def test_spectral_report_labels_lower_bound():
    rep = spectral_report(halfline_critical(), radius=20, test_function=halfline_test_function, lam=1.0)
    d = rep.to_dict()
    assert d["cw_certified"]["success"]
    assert any("lower bound" in n for n in d["notes"])
