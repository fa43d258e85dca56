"""Contraction-order planning and execution for tensor networks.

A :class:`TensorNetwork` is a list of tensors in which every label name
appears at most twice; labels appearing twice are bonds (summed), labels
appearing once stay open.  A :class:`ContractionPlan` is a binary tree of
pairwise merges, found either by exhaustive dynamic programming over subsets
(:func:`plan_optimal`, global optimum of the scalar-multiplication count) or
by a size-greedy heuristic (:func:`plan_greedy`).

The execution engine below runs a plan on raw arrays, supports a reserved
batch label that is carried through every step instead of being summed, and
can replay the tree in reverse to produce the environment (cotangent) of
every leaf.  Environments are what gradient-based training consumes: for a
multilinear scalar network, the environment of a leaf is exactly the partial
derivative of the output with respect to that leaf's entries.

Cost model: each step costs the product of the extents of the union of the
two operands' labels (the number of scalar multiplications of a naive
loop-nest), and ``est_max_size`` is the largest step output, which by
construction equals the largest intermediate the engine allocates.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import IndexLabel, Tensor

__all__ = [
    "BATCH",
    "TensorNetwork",
    "ContractionPlan",
    "PlannerError",
    "plan_optimal",
    "plan_greedy",
    "plan_auto",
    "plan_cache_key",
    "PlanCache",
    "execute_plan",
    "pair_contract",
    "run_plan_arrays",
    "backward_plan_arrays",
]

# Reserved label name: carried through contractions (einsum-style batch axis),
# never summed, and excluded from planning, which sees per-record structure.
BATCH = "@batch"


class PlannerError(ValueError):
    pass


@dataclass(frozen=True)
class TensorNetwork:
    """A multiset of tensors joined by shared label names.

    No label may appear more than twice, and both occurrences of a bond must
    agree on the extent.  Labels occurring exactly once are the open (output)
    indices of the full contraction.
    """

    tensors: tuple[Tensor, ...]

    def __post_init__(self) -> None:
        tensors = tuple(self.tensors)
        object.__setattr__(self, "tensors", tensors)
        if not tensors:
            raise PlannerError("a network needs at least one tensor")
        count: dict[str, int] = {}
        dims: dict[str, int] = {}
        for t in tensors:
            for l in t.labels:
                if l.name == BATCH:
                    raise PlannerError(f"label name {BATCH!r} is reserved")
                count[l.name] = count.get(l.name, 0) + 1
                if count[l.name] > 2:
                    raise PlannerError(f"label {l.name!r} appears more than twice")
                if dims.setdefault(l.name, l.dim) != l.dim:
                    raise PlannerError(
                        f"label {l.name!r} has inconsistent extents "
                        f"{dims[l.name]} vs {l.dim}"
                    )
        object.__setattr__(self, "_count", count)
        object.__setattr__(self, "_dims", dims)

    @property
    def open_labels(self) -> tuple[IndexLabel, ...]:
        seen: list[IndexLabel] = []
        for t in self.tensors:
            for l in t.labels:
                if self._count[l.name] == 1:  # type: ignore[attr-defined]
                    seen.append(l)
        return tuple(seen)

    @property
    def bond_names(self) -> tuple[str, ...]:
        out, seen = [], set()
        for t in self.tensors:
            for l in t.labels:
                if self._count[l.name] == 2 and l.name not in seen:  # type: ignore[attr-defined]
                    seen.add(l.name)
                    out.append(l.name)
        return tuple(out)


@dataclass(frozen=True)
class ContractionPlan:
    """An ordered list of pairwise merges forming a binary contraction tree.

    Node ids 0..n-1 are the input tensors; step k creates node n+k.  Every
    node is consumed exactly once, so a valid plan has exactly n-1 steps.
    """

    steps: tuple[tuple[int, int], ...]
    est_flops: int
    est_max_size: int

    def describe(self) -> str:
        lines = [f"steps: {len(self.steps)}"]
        n_leaves = len(self.steps) + 1
        for k, (i, j) in enumerate(self.steps):
            lines.append(f"  ({i}, {j}) -> {n_leaves + k}")
        lines.append(f"est_flops: {self.est_flops}")
        lines.append(f"est_max_size: {self.est_max_size}")
        return "\n".join(lines)


def _label_masks(net: TensorNetwork) -> tuple[list[int], list[int]]:
    """Bitmask of label ids per tensor, plus the extent of each label id.

    Because a label occurs at most twice, XOR of masks over a subset leaves
    exactly the subset's open labels set, which is what both cost functions
    need.
    """
    ids: dict[str, int] = {}
    dims: list[int] = []
    masks: list[int] = []
    for t in net.tensors:
        m = 0
        for l in t.labels:
            if l.name not in ids:
                ids[l.name] = len(dims)
                dims.append(l.dim)
            m |= 1 << ids[l.name]
        masks.append(m)
    return masks, dims


def _dimprod(mask: int, dims: list[int], memo: dict[int, int]) -> int:
    got = memo.get(mask)
    if got is not None:
        return got
    p, m, i = 1, mask, 0
    while m:
        if m & 1:
            p *= dims[i]
        m >>= 1
        i += 1
    memo[mask] = p
    return p


def plan_optimal(net: TensorNetwork, cap: int = 16) -> ContractionPlan:
    """Exhaustive subset DP returning a minimum-``est_flops`` plan.

    Searches all binary contraction trees, outer products included, so the
    result never costs more than :func:`plan_greedy`.  Runtime grows as 3^n;
    the cap bounds n (use the greedy planner past it).  Equal-cost trees are
    broken deterministically toward the lexicographically smallest step
    sequence of the canonical left-first linearization.
    """
    n = len(net.tensors)
    if n > cap:
        raise PlannerError(f"network of {n} tensors exceeds optimal-planner cap {cap}")
    if n == 1:
        return ContractionPlan((), 0, 0)

    masks, dims = _label_masks(net)
    memo: dict[int, int] = {}
    full = (1 << n) - 1

    # open[S]: XOR of member masks == open labels of the partial contraction S
    open_of = [0] * (full + 1)
    for s in range(1, full + 1):
        low = s & (-s)
        open_of[s] = open_of[s ^ low] ^ masks[low.bit_length() - 1]

    cost: dict[int, int] = {}
    split: dict[int, tuple[int, int]] = {}
    for i in range(n):
        cost[1 << i] = 0

    for size in range(2, n + 1):
        for combo in itertools.combinations(range(n), size):
            s = 0
            for i in combo:
                s |= 1 << i
            low = s & (-s)
            rest = s ^ low
            best = None
            best_s1 = -1
            # enumerate submasks s1 of s that contain the lowest member,
            # so each unordered split is visited once
            sub = rest
            while True:
                s1 = sub | low
                s2 = s ^ s1
                if s2:
                    c = (
                        cost[s1]
                        + cost[s2]
                        + _dimprod(open_of[s1] | open_of[s2], dims, memo)
                    )
                    if best is None or c < best or (c == best and s1 < best_s1):
                        best, best_s1 = c, s1
                if sub == 0:
                    break
                sub = (sub - 1) & rest
            cost[s] = best  # type: ignore[assignment]
            split[s] = (best_s1, s ^ best_s1)

    steps: list[tuple[int, int]] = []
    node_of: dict[int, int] = {1 << i: i for i in range(n)}
    next_id = n
    max_size = 0

    def build(s: int) -> int:
        nonlocal next_id, max_size
        if s in node_of:
            return node_of[s]
        s1, s2 = split[s]
        left = build(s1)
        right = build(s2)
        steps.append((left, right))
        node_of[s] = next_id
        next_id += 1
        max_size = max(max_size, _dimprod(open_of[s], dims, memo))
        return node_of[s]

    build(full)
    return ContractionPlan(tuple(steps), cost[full], max_size)


def plan_greedy(net: TensorNetwork) -> ContractionPlan:
    """Repeatedly merge the pair with the smallest size(out) - size(a) - size(b).

    Ties go to the smallest (i, j) node-id pair.  Always returns a valid plan
    (disconnected pairs are legal merges), but with no optimality guarantee.
    """
    n = len(net.tensors)
    if n == 1:
        return ContractionPlan((), 0, 0)
    masks, dims = _label_masks(net)
    memo: dict[int, int] = {}
    alive: dict[int, int] = {i: masks[i] for i in range(n)}
    steps: list[tuple[int, int]] = []
    flops = 0
    max_size = 0
    next_id = n
    while len(alive) > 1:
        best_key = None
        best_pair = None
        for i, j in itertools.combinations(sorted(alive), 2):
            mi, mj = alive[i], alive[j]
            out_size = _dimprod(mi ^ mj, dims, memo)
            score = out_size - _dimprod(mi, dims, memo) - _dimprod(mj, dims, memo)
            key = (score, i, j)
            if best_key is None or key < best_key:
                best_key = key
                best_pair = (i, j)
        i, j = best_pair  # type: ignore[misc]
        mi, mj = alive.pop(i), alive.pop(j)
        flops += _dimprod(mi | mj, dims, memo)
        out_mask = mi ^ mj
        max_size = max(max_size, _dimprod(out_mask, dims, memo))
        alive[next_id] = out_mask
        steps.append((i, j))
        next_id += 1
    return ContractionPlan(tuple(steps), flops, max_size)


def plan_auto(net: TensorNetwork, optimal_cap: int = 12) -> ContractionPlan:
    """Optimal search for small networks, greedy beyond ``optimal_cap``."""
    if len(net.tensors) <= optimal_cap:
        return plan_optimal(net, cap=optimal_cap)
    return plan_greedy(net)


def plan_cache_key(net: TensorNetwork) -> tuple:
    """A key equal for networks of identical structure and extents.

    Label names are canonicalized by order of first appearance while scanning
    tensors (and their axes) in position order, so renaming every label
    consistently leaves the key unchanged.
    """
    ids: dict[str, int] = {}
    key: list[tuple[tuple[int, int], ...]] = []
    for t in net.tensors:
        sig = []
        for l in t.labels:
            if l.name not in ids:
                ids[l.name] = len(ids)
            sig.append((ids[l.name], l.dim))
        key.append(tuple(sig))
    return tuple(key)


class PlanCache:
    """Keyed plan store: lock-free lookup, single-writer insertion."""

    def __init__(self) -> None:
        self._plans: dict[tuple, ContractionPlan] = {}
        self._lock = threading.Lock()

    def get_or_plan(self, net: TensorNetwork, optimal_cap: int = 12) -> ContractionPlan:
        key = plan_cache_key(net)
        plan = self._plans.get(key)
        if plan is None:
            plan = plan_auto(net, optimal_cap=optimal_cap)
            with self._lock:
                self._plans.setdefault(key, plan)
        return plan

    def __len__(self) -> int:
        return len(self._plans)


# ---------------------------------------------------------------------------
# Execution engine (arrays + label-name tuples; batch axis aware)
# ---------------------------------------------------------------------------

def _dims_of(arr: np.ndarray, labels: tuple[str, ...]) -> dict[str, int]:
    return dict(zip(labels, arr.shape))


def _permuted(arr: np.ndarray, perm: list[int]) -> np.ndarray:
    if perm == sorted(perm):
        return arr
    return np.transpose(arr, perm)


def pair_contract(
    a: np.ndarray,
    la: tuple[str, ...],
    b: np.ndarray,
    lb: tuple[str, ...],
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Contract over all shared labels except ``BATCH``, which is kept.

    Returns the result and its labels, ordered batch-first, then a's free
    labels, then b's.  Implemented as transpose/reshape plus one matmul so
    the heavy lifting stays in BLAS; when exactly one operand carries the
    batch axis the batch is folded into the row dimension, giving a single
    large GEMM instead of a loop of small ones.
    """
    sb = set(lb)
    shared = [x for x in la if x in sb and x != BATCH]
    shset = set(shared)
    a_b = BATCH in la
    b_b = BATCH in lb
    free_a = [x for x in la if x not in shset and x != BATCH]
    free_b = [x for x in lb if x not in shset and x != BATCH]
    da = _dims_of(a, la)
    db = _dims_of(b, lb)
    for x in shared:
        if da[x] != db[x]:
            raise PlannerError(f"shared label {x!r} extent mismatch {da[x]} vs {db[x]}")

    out_labels = ((BATCH,) if (a_b or b_b) else ()) + tuple(free_a) + tuple(free_b)
    fa_dims = tuple(da[x] for x in free_a)
    fb_dims = tuple(db[x] for x in free_b)
    fa = int(np.prod(fa_dims)) if free_a else 1
    fb = int(np.prod(fb_dims)) if free_b else 1
    sz = int(np.prod([da[x] for x in shared])) if shared else 1

    if b_b and not a_b:
        # fold the batch into b's row block: (fa, sz) @ (sz, B*fb)
        perm_b = [lb.index(x) for x in shared] + [lb.index(BATCH)] + [
            lb.index(x) for x in free_b
        ]
        bm = _permuted(b, perm_b).reshape(sz, -1)
        am = _permuted(a, [la.index(x) for x in free_a + shared]).reshape(fa, sz)
        out = (am @ bm).reshape((fa,) + (-1,) + fb_dims)
        out = np.moveaxis(out, 0, 1).reshape((-1,) + fa_dims + fb_dims)
        return out, out_labels

    perm_a = ([la.index(BATCH)] if a_b else []) + [la.index(x) for x in free_a + shared]
    am = _permuted(a, perm_a).reshape(((-1,) if a_b else ()) + (fa, sz))
    if a_b and not b_b:
        # fold the batch into a's row block: (B*fa, sz) @ (sz, fb)
        bm = _permuted(b, [lb.index(x) for x in shared + free_b]).reshape(sz, fb)
        out = am.reshape(-1, sz) @ bm
        return out.reshape((-1,) + fa_dims + fb_dims), out_labels

    perm_b = ([lb.index(BATCH)] if b_b else []) + [lb.index(x) for x in shared + free_b]
    bm = _permuted(b, perm_b).reshape(((-1,) if b_b else ()) + (sz, fb))
    out = am @ bm
    shape = ((out.shape[0],) if a_b else ()) + fa_dims + fb_dims
    return out.reshape(shape), out_labels


def _align(
    arr: np.ndarray, labels: tuple[str, ...], target: tuple[str, ...]
) -> np.ndarray:
    """Permute ``arr`` into ``target`` label order, summing out a batch axis
    the target does not carry."""
    if BATCH in labels and BATCH not in target:
        ax = labels.index(BATCH)
        arr = arr.sum(axis=ax)
        labels = labels[:ax] + labels[ax + 1 :]
    if labels == target:
        return arr
    return np.transpose(arr, [labels.index(x) for x in target])


def _validate_plan(n_leaves: int, plan: ContractionPlan) -> None:
    if len(plan.steps) != n_leaves - 1:
        raise PlannerError(
            f"plan has {len(plan.steps)} steps for {n_leaves} tensors; "
            f"expected {n_leaves - 1}"
        )
    used = set()
    for k, (i, j) in enumerate(plan.steps):
        limit = n_leaves + k
        for node in (i, j):
            if not 0 <= node < limit:
                raise PlannerError(f"step {k} references unknown node {node}")
            if node in used:
                raise PlannerError(f"node {node} consumed twice")
            used.add(node)
        if i == j:
            raise PlannerError(f"step {k} merges node {i} with itself")


def run_plan_arrays(
    arrays: Sequence[np.ndarray],
    labels: Sequence[tuple[str, ...]],
    plan: ContractionPlan,
) -> tuple[list[np.ndarray], list[tuple[str, ...]]]:
    """Execute a plan over raw arrays; returns all nodes (leaves first).

    The last node is the full contraction.  Arrays may carry the ``BATCH``
    label; the plan itself is computed on the batch-free structure.
    """
    _validate_plan(len(arrays), plan)
    nodes = list(arrays)
    node_labels = list(tuple(l) for l in labels)
    for i, j in plan.steps:
        out, lout = pair_contract(nodes[i], node_labels[i], nodes[j], node_labels[j])
        nodes.append(out)
        node_labels.append(lout)
    return nodes, node_labels


def backward_plan_arrays(
    nodes: list[np.ndarray],
    node_labels: list[tuple[str, ...]],
    plan: ContractionPlan,
    seed: np.ndarray,
    n_leaves: int,
) -> list[np.ndarray]:
    """Reverse sweep of a contraction tree: environments of every leaf.

    ``seed`` is the cotangent of the root (matching the root's labels; for a
    scalar network that is just 1.0, for a batched scalar a weight vector).
    The environment returned for leaf t satisfies d(seed . root)/d(t), with
    the batch axis summed out whenever the leaf does not carry it — which is
    exactly the weighted sum of per-record environments.
    """
    cots: dict[int, tuple[np.ndarray, tuple[str, ...]]] = {}
    root = n_leaves + len(plan.steps) - 1
    cots[root] = (np.asarray(seed, dtype=np.complex128), node_labels[root])
    for k in range(len(plan.steps) - 1, -1, -1):
        i, j = plan.steps[k]
        out_id = n_leaves + k
        cot, lc = cots.pop(out_id)
        gi, lgi = pair_contract(cot, lc, nodes[j], node_labels[j])
        cots[i] = (_align(gi, lgi, node_labels[i]), node_labels[i])
        gj, lgj = pair_contract(cot, lc, nodes[i], node_labels[i])
        cots[j] = (_align(gj, lgj, node_labels[j]), node_labels[j])
    return [cots[t][0] for t in range(n_leaves)]


def execute_plan(net: TensorNetwork, plan: ContractionPlan) -> Tensor:
    """Contract the whole network following ``plan``.

    The value is plan-independent; axes of the result are ordered by sorted
    label name so that different plans produce identical tensors.
    """
    arrays = [t.data for t in net.tensors]
    labels = [t.names for t in net.tensors]
    nodes, node_labels = run_plan_arrays(arrays, labels, plan)
    out, lout = nodes[-1], node_labels[-1]
    dims = {}
    for t in net.tensors:
        for l in t.labels:
            dims[l.name] = l.dim
    order = tuple(sorted(lout))
    out = _align(out, lout, order)
    return Tensor(tuple(IndexLabel(x, dims[x]) for x in order), out)
