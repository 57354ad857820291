import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from disclosure_mfg.model import Belief
from disclosure_mfg.tree import (
    Node,
    RevelationTree,
    TreeError,
    add_split,
    canonical,
    conditional_expectation,
    enumerate_paths,
    full_reveal,
    leaf_average,
    no_reveal,
    permute_children,
    validate,
)


def two_leaf(weights):
    nodes = (
        Node(0, 0, Belief.of((0.5, 0.5)), None, 1.0, (1, 2)),
        Node(1, 1, Belief.of((1.0, 0.0)), 0, weights[0]),
        Node(2, 1, Belief.of((0.0, 1.0)), 0, weights[1]),
    )
    return RevelationTree(1.0, (0.0,), nodes)


def random_simplex(rng, k):
    return rng.dirichlet(np.ones(k))


def nested_tree(seed, n_types=3, branching=(2, 3)):
    """Two-stage tree built bottom-up so the martingale constraint holds by construction."""
    rng = np.random.default_rng(seed)
    b1, b2 = branching
    leaves = [[random_simplex(rng, n_types) for _ in range(b2)] for _ in range(b1)]
    inner_w = [random_simplex(rng, b2) for _ in range(b1)]
    mids = [sum(w * p for w, p in zip(ws, ps)) for ws, ps in zip(inner_w, leaves)]
    top_w = random_simplex(rng, b1)
    root = sum(w * p for w, p in zip(top_w, mids))
    root = root / root.sum()
    tree = no_reveal(root, (0.25, 0.5), 1.0)
    tree = add_split(tree, 0, [Belief.of(m / m.sum()) for m in mids], top_w)
    for k in range(b1):
        kid = tree.nodes[0].children[k]
        tree = add_split(tree, kid, [Belief.of(p / p.sum()) for p in leaves[k]], inner_w[k])
    return tree, top_w, inner_w


def test_full_revelation_split_is_valid():
    assert validate(two_leaf((0.5, 0.5))) is None


def test_wrong_weights_report_martingale_residual():
    v = validate(two_leaf((0.6, 0.4)))
    assert v.node == 0 and v.constraint == "martingale constraint"
    assert np.allclose(v.residual, (0.1, -0.1), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_random_nested_three_type_tree_is_valid(seed):
    tree, *_ = nested_tree(seed)
    assert validate(tree) is None
    assert tree.n_types == 3 and len(tree.leaves()) == 6


def test_no_reveal_single_constant_path():
    tree = no_reveal((0.3, 0.7))
    (path,) = enumerate_paths(tree)
    assert path.probability == 1.0
    assert all(path.belief_at(t).weights == (0.3, 0.7) for t in (0.0, 0.5, 1.0))


def test_full_reveal_leaves_and_weights():
    tree = full_reveal((0.3, 0.7), 0.0)
    leaves = tree.leaves()
    assert [l.belief.weights for l in leaves] == [(1.0, 0.0), (0.0, 1.0)]
    assert [l.weight for l in leaves] == [0.3, 0.7]


def test_forced_weights_of_symmetric_split():
    tree = add_split(no_reveal((0.5, 0.5), (0.5,)), 0, [(0.9, 0.1), (0.1, 0.9)])
    assert [n.weight for n in tree.children(0)] == pytest.approx([0.5, 0.5], abs=1e-14)


def test_split_violating_martingale_rejected():
    with pytest.raises(TreeError, match="martingale"):
        add_split(no_reveal((0.5, 0.5), (0.5,)), 0, [(0.9, 0.1), (0.1, 0.9)], [0.7, 0.3])


def test_split_without_later_time_rejected():
    with pytest.raises(TreeError, match="leaf"):
        add_split(no_reveal((0.5, 0.5)), 0, [(1, 0), (0, 1)])


def test_conditional_expectation_examples():
    x = np.linspace(-1, 1, 11)
    f = 2 * x + 1
    assert np.allclose(conditional_expectation([f, f], [0.3, 0.7]), f, rtol=1e-15, atol=1e-15)
    assert np.array_equal(conditional_expectation([f, -f], [1.0, 0.0]), f)
    g = -x + 4
    assert np.allclose(conditional_expectation([f, g], [0.25, 0.75]), 0.25 * (2 * x + 1) + 0.75 * (-x + 4), atol=1e-15)
    with pytest.raises(TreeError, match="grid"):
        conditional_expectation([f, x[:5]], [0.5, 0.5])


def test_full_reveal_three_types_paths():
    p0 = (0.2, 0.3, 0.5)
    paths = enumerate_paths(full_reveal(p0, 0.0))
    assert [p.probability for p in paths] == list(p0)


def test_two_stage_binary_paths_match_product_enumeration():
    tree, top_w, inner_w = nested_tree(7, n_types=2, branching=(2, 2))
    got = sorted(p.probability for p in enumerate_paths(tree))
    brute = sorted(top_w[a] * inner_w[a][b] for a, b in itertools.product(range(2), range(2)))
    assert got == pytest.approx(brute, abs=1e-15)


@given(seed=st.integers(0, 10_000), b1=st.integers(1, 3), b2=st.integers(1, 3))
def test_iterated_martingale_and_probabilities(seed, b1, b2):
    tree, *_ = nested_tree(seed, branching=(b1, b2))
    assert sum(p.probability for p in enumerate_paths(tree)) == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(leaf_average(tree), np.asarray(tree.prior), atol=1e-9)


@given(seed=st.integers(0, 10_000))
def test_split_of_valid_tree_stays_valid(seed):
    rng = np.random.default_rng(seed)
    posts = [random_simplex(rng, 3) for _ in range(3)]
    w = random_simplex(rng, 3)
    parent = sum(wi * p for wi, p in zip(w, posts))
    base = no_reveal(parent / parent.sum(), (0.2, 0.6))
    assert validate(base) is None
    assert validate(add_split(base, 0, [p / p.sum() for p in posts], w)) is None


def test_json_round_trip_exact():
    tree, *_ = nested_tree(3)
    back = RevelationTree.from_json(tree.to_json())
    assert back == tree
    doc = json.loads(tree.to_json())
    assert doc["times"] == [0.25, 0.5]


def test_permuting_siblings_keeps_canonical_form():
    tree, *_ = nested_tree(11)
    shuffled = permute_children(tree, np.random.default_rng(0))
    assert validate(shuffled) is None
    assert canonical(shuffled) == canonical(tree)
