import json
import warnings

import pytest
from hypothesis import given, settings, strategies as st

from conecover.errors import (
    BackwardProbOutOfRange,
    MultiEdgeDetected,
    RowNotStochastic,
    SpecError,
    UnknownVertex,
    UnreachableVertex,
)
from conecover.generators import (
    _k,
    entropy_example_spec,
    halfline_critical,
    homogeneous_tree,
    make_generator,
    oscillating_growth,
    rwdcre,
    two_sided_line,
)
from conecover.graph import expand_multiedges, load_spec, m_entry, validate_spec, vertex_to_str
from conecover.spectral import count_levels

from _oracles import enumerate_levels


def small_spec(**over):
    spec = {
        "epsilon": 1e-6,
        "root": "a",
        "vertices": ["a", "b"],
        "edges": [{"from": "a", "to": "b", "pg": 1.0}, {"from": "b", "to": "a", "pg": 1.0}],
        "backward": {"a": 0.5, "b": 0.5},
    }
    spec.update(over)
    return spec


def test_entropy_example_is_valid(entropy_graph):
    assert entropy_graph.finite
    assert len(entropy_graph) == 3
    assert entropy_graph.kernel == "tree"
    assert entropy_graph.warnings == []


def test_backward_zero_rejected():
    with pytest.raises(BackwardProbOutOfRange):
        validate_spec(small_spec(backward={"a": 0.0, "b": 0.5}))


def test_backward_must_stay_inside_epsilon_band():
    with pytest.raises(BackwardProbOutOfRange):
        validate_spec(small_spec(epsilon=0.1, backward={"a": 0.95, "b": 0.5}))


def test_row_summing_to_point_nine_rejected():
    spec = small_spec(edges=[{"from": "a", "to": "b", "pg": 0.9}, {"from": "b", "to": "a", "pg": 1.0}])
    with pytest.raises(RowNotStochastic) as exc:
        validate_spec(spec)
    assert exc.value.total == pytest.approx(0.9)


def test_tree_kernel_rows_checked_with_backward():
    spec = small_spec(kernel="tree", edges=[{"from": "a", "to": "b", "p": 0.4}, {"from": "b", "to": "a", "p": 0.5}])
    with pytest.raises(RowNotStochastic):
        validate_spec(spec)


def test_parallel_edges_need_expansion():
    spec = small_spec(edges=[
        {"from": "a", "to": "b", "pg": 0.5}, {"from": "a", "to": "b", "pg": 0.5},
        {"from": "b", "to": "a", "pg": 1.0},
    ])
    with pytest.raises(MultiEdgeDetected):
        validate_spec(spec)
    g = validate_spec(expand_multiedges(spec))
    assert len(g) == 3


def test_unreachable_vertex_warns_or_fails():
    spec = small_spec(
        vertices=["a", "b", "c"],
        edges=[{"from": "a", "to": "b", "pg": 1.0}, {"from": "b", "to": "a", "pg": 1.0},
               {"from": "c", "to": "a", "pg": 1.0}],
        backward={"a": 0.5, "b": 0.5, "c": 0.5},
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = validate_spec(spec)
    assert any("c" in w for w in g.warnings)
    with pytest.raises(UnreachableVertex):
        validate_spec(spec, strict=True)


def test_unknown_edge_target():
    spec = small_spec(edges=[{"from": "a", "to": "zz", "pg": 1.0}, {"from": "b", "to": "a", "pg": 1.0}])
    with pytest.raises(UnknownVertex):
        validate_spec(spec)


def test_missing_key():
    spec = small_spec()
    del spec["backward"]
    with pytest.raises(SpecError):
        validate_spec(spec)


def test_m_entry_values(entropy_graph):
    assert m_entry(entropy_graph, "i0", "i1") == pytest.approx(1.0, abs=1e-12)
    assert m_entry(entropy_graph, "i2", "i1") == pytest.approx(3.0, abs=1e-12)
    assert m_entry(entropy_graph, "i1", "i2") == 0.0
    with pytest.raises(UnknownVertex):
        m_entry(entropy_graph, "nope", "i1")


def test_kernel_conventions_agree(entropy_graph):
    # same walk written with pG instead of the tree kernel
    pg_spec = {
        "root": "i0",
        "vertices": ["i0", "i1", "i2"],
        "edges": [
            {"from": "i0", "to": "i1", "pg": 0.5}, {"from": "i0", "to": "i2", "pg": 0.5},
            {"from": "i1", "to": "i0", "pg": 1.0}, {"from": "i2", "to": "i1", "pg": 1.0},
        ],
        "backward": {"i0": 1 / 3, "i1": 1 / 2, "i2": 1 / 4},
    }
    g = validate_spec(pg_spec)
    for i in g.vertices:
        assert dict(g.forward(i)) == pytest.approx(dict(entropy_graph.forward(i)), abs=1e-15)


def test_kernel_inferred_from_edge_keys():
    doc = entropy_example_spec()
    del doc["kernel"]
    assert validate_spec(doc).kernel == "tree"


def test_load_spec_roundtrip(tmp_path, entropy_graph):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(entropy_graph.to_spec()))
    g = load_spec(p)
    assert g.spec_hash() == entropy_graph.spec_hash()


def test_double_loop_expands_to_binary_tree():
    spec = {"root": "o", "vertices": ["o"], "backward": {"o": 0.25},
            "edges": [{"from": "o", "to": "o", "pg": 0.5}, {"from": "o", "to": "o", "pg": 0.5}]}
    out = expand_multiedges(spec)
    assert len(out["vertices"]) == 2
    g = validate_spec(out)
    assert count_levels(g, 10).counts == [2**n for n in range(11)]


def test_multiplicity_key_matches_repeated_edges():
    a = {"root": "o", "vertices": ["o"], "backward": {"o": 0.25},
         "edges": [{"from": "o", "to": "o", "pg": 1.0, "multiplicity": 3}]}
    b = {"root": "o", "vertices": ["o"], "backward": {"o": 0.25},
         "edges": [{"from": "o", "to": "o", "pg": 1 / 3}] * 3}
    ga, gb = validate_spec(expand_multiedges(a)), validate_spec(expand_multiedges(b))
    assert count_levels(ga, 6).counts == count_levels(gb, 6).counts == [3**n for n in range(7)]


def test_simple_spec_unchanged_and_idempotent():
    spec = entropy_example_spec()
    once = expand_multiedges(spec)
    assert once == spec
    assert expand_multiedges(once) == once


def test_triple_edge_expansion_preserves_level_counts():
    raw = {
        "root": "i",
        "vertices": ["i", "j", "k"],
        "edges": [
            {"from": "i", "to": "j", "pg": 0.6, "multiplicity": 3},
            {"from": "i", "to": "k", "pg": 0.4},
            {"from": "j", "to": "k", "pg": 0.5},
            {"from": "j", "to": "i", "pg": 0.5},
            {"from": "k", "to": "i", "pg": 1.0},
        ],
        "backward": {"i": 0.3, "j": 0.4, "k": 0.5},
    }
    out = expand_multiedges(raw)
    assert len(out["vertices"]) == 5
    g = validate_spec(out)
    multigraph = {"i": ["j", "j", "j", "k"], "j": ["k", "i"], "k": ["i"]}
    assert count_levels(g, 8).counts == enumerate_levels(multigraph, "i", 8)
    clones = [v for v in out["vertices"] if v not in ("i", "j", "k")]
    for c in clones:
        assert g.backward(c) == 0.4
        assert sorted(j for j, _ in g.out_edges(c)) == ["i", "k"]


@pytest.mark.parametrize("i", [0, 1, 2, 10])
def test_halfline_rates(i):
    g = halfline_critical()
    if i == 0:
        assert m_entry(g, 0, 1) == pytest.approx(2.0, abs=1e-12)
        return
    assert m_entry(g, i, i + 1) == pytest.approx((1 + 1 / i) ** 2, abs=1e-12)
    assert m_entry(g, i, i - 1) == pytest.approx(3.0**-i, abs=1e-12)


def test_halfline_root_rates():
    g = halfline_critical()
    assert g.backward(0) == pytest.approx(1 / 3)
    assert dict(g.forward(0)) == {1: pytest.approx(2 / 3)}


def test_two_sided_line_rates():
    g = two_sided_line(p=0.7, q=0.8, c1=0.1, c2=0.2)
    assert g.backward(5) == 0.1 and g.backward(-5) == 0.2
    assert dict(g.out_edges(3)) == {4: 0.7, 2: pytest.approx(0.3)}
    assert dict(g.out_edges(-3)) == {-4: 0.8, -2: pytest.approx(0.2)}


def test_oscillating_growth_block_sizes():
    assert [_k(n) for n in range(1, 5)] == [2, 6, 24, 96]
    g = oscillating_growth()
    assert g.root == ("C", 1, (), 1)
    assert vertex_to_str(g.root) == '["C",1,[],1]'


def test_rwdcre_is_deterministic_given_seed():
    a = rwdcre("0.3,0.7", "1,1", "0.4", "1", seed=5)
    b = rwdcre("0.3,0.7", "1,1", "0.4", "1", seed=5)
    c = rwdcre("0.3,0.7", "1,1", "0.4", "1", seed=6)
    envs = [[x.environment(z)[0] for z in range(-40, 40)] for x in (a, b, c)]
    assert envs[0] == envs[1]
    assert envs[0] != envs[2]
    assert set(envs[0]) == {0.3, 0.7}


def test_generator_spec_dispatch():
    g = validate_spec({"generator": "homogeneous_tree", "params": {"d": 3, "beta": 0.2}})
    assert count_levels(g, 4).counts == [1, 3, 9, 27, 81]
    with pytest.raises(SpecError):
        make_generator("no_such_generator", {})


GENERATOR_CASES = [
    ("halfline_critical", {}),
    ("two_sided_line", {}),
    ("homesick", {"lam": 1.5}),
    ("oscillating_growth", {}),
    ("rwdcre", {"omega_support": "0.2,0.9", "omega_weights": "1,2", "nu_support": "0.3,0.6", "nu_weights": "1,1"}),
    ("homogeneous_tree", {"d": 3, "beta": 0.3}),
]


@settings(max_examples=30, deadline=None)
@given(case=st.sampled_from(GENERATOR_CASES), radius=st.integers(1, 40))
def test_generators_are_stochastic_on_balls(case, radius):
    g = make_generator(*case)
    for v in g.ball(radius, limit=20000):
        b = g.backward(v)
        assert g.epsilon < b < 1 - g.epsilon
        row = g.forward(v)
        assert row
        assert abs(b + sum(p for _, p in row) - 1.0) <= 1e-12
        assert abs(sum(pg for _, pg in g.out_edges(v)) - 1.0) <= 1e-12
        targets = [j for j, _ in row]
        assert len(targets) == len(set(targets))
        if g.degree_bound is not None:
            assert len(row) <= g.degree_bound
