"""Finite revelation trees: discrete-time, finite-support belief martingales.

A tree with revelation times ``t_1 < ... < t_K`` has nodes on levels
``0..K``.  A node on level ``k`` carries the public belief on
``[t_k, t_{k+1})`` (with ``t_0 = 0`` and ``t_{K+1} = T``); its children are the
possible beliefs after the revelation at ``t_{k+1}``.  A revelation at time 0
gives the root an empty interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .model import Belief

MARTINGALE_TOL = 1e-10


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    level: int
    belief: Belief
    parent: int | None
    weight: float  # probability of the edge from the parent (1 at the root)
    children: tuple[int, ...] = ()


@dataclass(frozen=True)
class Violation:
    node: int
    constraint: str
    residual: tuple[float, ...]

    def __str__(self):
        return f"node {self.node}: {self.constraint} (residual {list(self.residual)})"


@dataclass(frozen=True)
class BeliefPath:
    segments: tuple[tuple[tuple[float, float], Belief], ...]
    probability: float
    nodes: tuple[int, ...]

    @property
    def leaf_belief(self) -> Belief:
        return self.segments[-1][1]

    def belief_at(self, t: float) -> Belief:
        """Belief in force at time ``t`` (right-continuous)."""
        for (a, b), p in self.segments:
            if a <= t < b:
                return p
        return self.segments[-1][1]


@dataclass(frozen=True)
class RevelationTree:
    horizon: float
    times: tuple[float, ...]
    nodes: tuple[Node, ...]

    # -- basic queries --------------------------------------------------------

    @property
    def prior(self) -> Belief:
        return self.nodes[0].belief

    @property
    def depth(self) -> int:
        return len(self.times)

    @property
    def n_types(self) -> int:
        return len(self.prior)

    def node(self, i: int) -> Node:
        return self.nodes[i]

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if not n.children]

    def interval(self, node_id: int) -> tuple[float, float]:
        k = self.nodes[node_id].level
        bounds = (0.0,) + self.times + (self.horizon,)
        return bounds[k], bounds[k + 1]

    def children(self, node_id: int) -> list[Node]:
        return [self.nodes[c] for c in self.nodes[node_id].children]

    def path_probability(self, node_id: int) -> float:
        prob = 1.0
        node = self.nodes[node_id]
        while node.parent is not None:
            prob *= node.weight
            node = self.nodes[node.parent]
        return prob

    # -- serialisation ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "times": list(self.times),
            "nodes": [
                {
                    "id": n.id,
                    "level": n.level,
                    "belief": list(n.belief.weights),
                    "parent": n.parent,
                    "weight": n.weight,
                    "children": list(n.children),
                }
                for n in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RevelationTree":
        try:
            nodes = tuple(
                Node(
                    id=int(d["id"]),
                    level=int(d["level"]),
                    belief=Belief.of(d["belief"]),
                    parent=None if d["parent"] is None else int(d["parent"]),
                    weight=float(d["weight"]),
                    children=tuple(int(c) for c in d["children"]),
                )
                for d in doc["nodes"]
            )
            tree = cls(float(doc["horizon"]), tuple(float(t) for t in doc["times"]), nodes)
        except (KeyError, TypeError, ValueError) as exc:
            raise TreeError(f"malformed tree document: {exc}") from None
        return tree

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "RevelationTree":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Validation


def validate(tree: RevelationTree) -> Violation | None:
    """Return the first violated invariant, or ``None`` for a valid tree."""
    times = tree.times
    if any(not 0.0 <= t < tree.horizon for t in times):
        return Violation(0, "revelation times must lie in [0, T)", tuple(times))
    if any(b <= a for a, b in zip(times, times[1:])):
        return Violation(0, "revelation times must be strictly increasing", tuple(times))
    if not tree.nodes or tree.nodes[0].parent is not None or tree.nodes[0].level != 0:
        return Violation(0, "node 0 must be the root on level 0", ())
    n_types = tree.n_types
    for pos, node in enumerate(tree.nodes):
        if node.id != pos:
            return Violation(node.id, "node ids must equal their positions", ())
        if len(node.belief) != n_types:
            return Violation(node.id, "belief dimension differs from the root", ())
        if not node.children:
            if node.level != tree.depth:
                return Violation(node.id, f"leaf on level {node.level}, expected {tree.depth}", ())
            continue
        kids = [tree.nodes[c] for c in node.children]
        for kid in kids:
            if kid.parent != node.id or kid.level != node.level + 1:
                return Violation(kid.id, "child does not point back to its parent", ())
            if not 0.0 < kid.weight <= 1.0:
                return Violation(kid.id, "edge weight outside (0, 1]", (kid.weight,))
        wsum = math.fsum(k.weight for k in kids)
        if abs(wsum - 1.0) > MARTINGALE_TOL:
            return Violation(node.id, "edge weights must sum to 1", (wsum - 1.0,))
        resid = _martingale_residual(node, kids)
        if np.max(np.abs(resid)) > MARTINGALE_TOL:
            return Violation(node.id, "martingale constraint", tuple(float(r) for r in resid))
    return None


def _martingale_residual(node: Node, kids: Sequence[Node]) -> np.ndarray:
    mean = np.sum([k.weight * np.asarray(k.belief) for k in kids], axis=0)
    return mean - np.asarray(node.belief)


def check(tree: RevelationTree) -> RevelationTree:
    bad = validate(tree)
    if bad is not None:
        raise TreeError(str(bad))
    return tree


# ---------------------------------------------------------------------------
# Constructors


def no_reveal(p0, times: Sequence[float] = (), horizon: float = 1.0) -> RevelationTree:
    """Tree whose belief stays at ``p0``; ``times`` only adds identity levels."""
    p0 = Belief.of(p0)
    nodes = []
    for k in range(len(times) + 1):
        nodes.append(
            Node(id=k, level=k, belief=p0, parent=k - 1 if k else None, weight=1.0,
                 children=(k + 1,) if k < len(times) else ())
        )
    return check(RevelationTree(float(horizon), tuple(float(t) for t in times), tuple(nodes)))


def full_reveal(p0, t: float = 0.0, horizon: float = 1.0) -> RevelationTree:
    """Reveal the type at time ``t``: leaf ``e_i`` with probability ``p0_i``."""
    p0 = Belief.of(p0)
    return add_split(no_reveal(p0, (t,), horizon), 0,
                     [Belief.vertex(i, len(p0)) for i in range(len(p0)) if p0[i] > 0],
                     [p0[i] for i in range(len(p0)) if p0[i] > 0])


def solve_weights(parent, posteriors) -> np.ndarray:
    """Weights ``q`` with ``sum q_c p_c = parent`` and ``sum q = 1`` (least squares)."""
    P = np.asarray([np.asarray(Belief.of(p)) for p in posteriors]).T
    A = np.vstack([P, np.ones(P.shape[1])])
    b = np.append(np.asarray(Belief.of(parent)), 1.0)
    q, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = np.max(np.abs(A @ q - b))
    if resid > MARTINGALE_TOL:
        raise TreeError(f"parent belief is not a convex combination of the posteriors (residual {resid:.3g})")
    return q


def add_split(tree: RevelationTree, node_id: int, posteriors, weights=None) -> RevelationTree:
    """Replace the identity continuation below ``node_id`` by a split.

    The node's children become ``posteriors`` with edge ``weights`` (solved from
    the martingale constraint if omitted), each followed by identity levels.
    """
    node = tree.nodes[node_id]
    if node.level >= tree.depth:
        raise TreeError(f"node {node_id} is a leaf; no later revelation time to split at")
    cur = node
    while cur.children:
        if len(cur.children) != 1 or tree.nodes[cur.children[0]].belief != node.belief:
            raise TreeError(f"node {node_id} already has a non-trivial continuation")
        cur = tree.nodes[cur.children[0]]
    posteriors = [Belief.of(p) for p in posteriors]
    if weights is None:
        weights = solve_weights(node.belief, posteriors)
    weights = [float(w) for w in weights]
    if len(weights) != len(posteriors):
        raise TreeError("need one weight per posterior")
    if any(not 0.0 < w <= 1.0 for w in weights) or abs(math.fsum(weights) - 1.0) > MARTINGALE_TOL:
        raise TreeError(f"split weights must be positive and sum to 1, got {weights}")
    resid = np.sum([w * np.asarray(p) for w, p in zip(weights, posteriors)], axis=0) - np.asarray(node.belief)
    if np.max(np.abs(resid)) > MARTINGALE_TOL:
        raise TreeError(f"split violates the martingale constraint (residual {resid.tolist()})")

    # drop the old identity continuation
    doomed = set()
    stack = list(node.children)
    while stack:
        c = stack.pop()
        doomed.add(c)
        stack.extend(tree.nodes[c].children)
    kept = [n for n in tree.nodes if n.id not in doomed]
    new = []
    next_id = len(tree.nodes)
    child_ids = []
    for p, w in zip(posteriors, weights):
        level, parent, weight = node.level + 1, node_id, w
        first = next_id
        child_ids.append(first)
        while level <= tree.depth:
            nid = next_id
            next_id += 1
            has_kid = level < tree.depth
            new.append(Node(nid, level, p, parent, weight, (nid + 1,) if has_kid else ()))
            parent, weight, level = nid, 1.0, level + 1
    kept = [replace(n, children=tuple(child_ids)) if n.id == node_id else n for n in kept]
    return check(_renumber(RevelationTree(tree.horizon, tree.times, tuple(kept + new))))


def _renumber(tree: RevelationTree) -> RevelationTree:
    """Relabel node ids so they equal positions, depth-first from the root."""
    by_id = {n.id: n for n in tree.nodes}
    order = []
    stack = [tree.nodes[0].id]
    while stack:
        nid = stack.pop()
        order.append(nid)
        stack.extend(reversed(by_id[nid].children))
    new_id = {old: i for i, old in enumerate(order)}
    nodes = tuple(
        replace(
            by_id[old],
            id=new_id[old],
            parent=None if by_id[old].parent is None else new_id[by_id[old].parent],
            children=tuple(new_id[c] for c in by_id[old].children),
        )
        for old in order
    )
    return RevelationTree(tree.horizon, tree.times, nodes)


def canonical(tree: RevelationTree) -> RevelationTree:
    """Same tree with siblings sorted by (belief, weight) and ids renumbered."""
    def key(nid):
        n = tree.nodes[nid]
        return (n.belief.weights, n.weight)

    nodes = tuple(replace(n, children=tuple(sorted(n.children, key=key))) for n in tree.nodes)
    return _renumber(RevelationTree(tree.horizon, tree.times, nodes))


def permute_children(tree: RevelationTree, rng: np.random.Generator) -> RevelationTree:
    """Shuffle sibling order (for invariance tests)."""
    nodes = tuple(replace(n, children=tuple(rng.permutation(n.children).tolist())) for n in tree.nodes)
    return _renumber(RevelationTree(tree.horizon, tree.times, nodes))


# ---------------------------------------------------------------------------
# Operations on trees


def conditional_expectation(child_values: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Pointwise convex combination of child value fields."""
    arrays = [np.asarray(v, dtype=float) for v in child_values]
    if not arrays:
        raise TreeError("no child fields")
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise TreeError(f"grid mismatch: {a.shape} vs {shape}")
    weights = [float(w) for w in weights]
    if len(weights) != len(arrays) or abs(math.fsum(weights) - 1.0) > MARTINGALE_TOL:
        raise TreeError("weights must match the fields and sum to 1")
    out = np.zeros(shape)
    for w, a in zip(weights, arrays):
        out += w * a
    return out


def enumerate_paths(tree: RevelationTree) -> list[BeliefPath]:
    paths = []
    for leaf in tree.leaves():
        chain = []
        node = leaf
        while node is not None:
            chain.append(node)
            node = None if node.parent is None else tree.nodes[node.parent]
        chain.reverse()
        prob = math.prod(n.weight for n in chain)
        segments = tuple((tree.interval(n.id), n.belief) for n in chain)
        paths.append(BeliefPath(segments, prob, tuple(n.id for n in chain)))
    return paths


def leaf_average(tree: RevelationTree) -> np.ndarray:
    return np.sum([p.probability * np.asarray(p.leaf_belief) for p in enumerate_paths(tree)], axis=0)
