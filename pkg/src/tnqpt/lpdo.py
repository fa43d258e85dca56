"""Locally purified density operator (LPDO) model of a channel's Choi matrix.

One complex tensor per qubit, joined by a bond per topology edge within the
layer and by a Kraus index to the (derived, never stored) conjugate layer.
The represented Choi matrix is

    Lambda[(sigma, tau), (sigma', tau')] =
        sum over bonds, primed bonds and Kraus indices of
        prod_j A_j[tau_j, sigma_j, nu_j, mu..] * conj(A_j)[tau'_j, sigma'_j, nu_j, mu'..]

which is positive semidefinite by construction.  Site arrays use the fixed
axis order (output, input, kraus, *bonds) with bonds following the globally
sorted edge list restricted to the site.

Every quantity of interest (trace, trace-preservation penalty, outcome
probabilities, subset reductions, overlap with a unitary channel) is evaluated
as a single tensor-network contraction through the plan cache; dense
materialization exists only as a small-system oracle.

Normalization convention: trace preservation means Tr_tau Lambda = I, hence
the target trace is Z = d^N, and probabilities/fidelities are evaluated on the
trace-normalized operator so that none of the reported quantities depend on
the raw scale of the site tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .choi import D, DenseChoi
from .planner import PlanCache, TensorNetwork, run_plan_arrays
from .tensor import IndexLabel, Tensor, contract_pair
from .topology import Topology

__all__ = [
    "Lpdo",
    "EvaluationError",
    "init_lpdo",
    "lpdo_from_circuit",
    "choi_element",
    "materialize_choi",
    "choi_trace",
    "TpDeviation",
    "tp_deviation",
    "tp_regularizer",
    "probability",
    "reduce_to_subset",
    "fidelity_to_unitary",
    "save_checkpoint",
    "load_checkpoint",
]

PLAN_CACHE = PlanCache()


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Lpdo:
    """Per-qubit site tensors over a topology; the variational state."""

    topology: Topology
    sites: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        sites = tuple(np.asarray(s, dtype=np.complex128) for s in self.sites)
        object.__setattr__(self, "sites", sites)
        n = self.topology.n_qubits
        if len(sites) != n:
            raise ValueError(f"expected {n} site tensors, got {len(sites)}")
        for j, arr in enumerate(sites):
            deg = len(self.topology.incident_edges(j))
            if arr.ndim != 3 + deg:
                raise ValueError(
                    f"site {j} has {arr.ndim} axes, expected {3 + deg} "
                    "(out, in, kraus, bonds)"
                )
            if arr.shape[0] != D or arr.shape[1] != D:
                raise ValueError(f"site {j} physical dims must be {D}")
            if arr.shape[2] < 1:
                raise ValueError(f"site {j} needs kraus dim >= 1")
        for a, b in self.topology.edges:
            da = sites[a].shape[3 + self.topology.incident_edges(a).index((a, b))]
            db = sites[b].shape[3 + self.topology.incident_edges(b).index((a, b))]
            if da != db:
                raise ValueError(f"bond ({a}, {b}) extent mismatch {da} vs {db}")

    @property
    def n_qubits(self) -> int:
        return self.topology.n_qubits

    @property
    def kraus_dims(self) -> tuple[int, ...]:
        return tuple(s.shape[2] for s in self.sites)

    @property
    def bond_dims(self) -> dict[tuple[int, int], int]:
        out = {}
        for a, b in self.topology.edges:
            out[(a, b)] = self.sites[a].shape[
                3 + self.topology.incident_edges(a).index((a, b))
            ]
        return out

    def copy(self) -> "Lpdo":
        return Lpdo(self.topology, tuple(s.copy() for s in self.sites))

    def with_sites(self, sites: Sequence[np.ndarray]) -> "Lpdo":
        return Lpdo(self.topology, tuple(sites))

    def leaf_labels(
        self, j: int, t: str = "", s: str = "", k: str = "", b: str = ""
    ) -> tuple[str, ...]:
        """Label names for site j's axes, with per-group name suffixes."""
        names = [f"t{j}{t}", f"s{j}{s}", f"k{j}{k}"]
        names += [f"b{a}.{c}{b}" for a, c in self.topology.incident_edges(j)]
        return tuple(names)

    def site_tensor(self, j: int, **suffixes: str) -> Tensor:
        labels = self.leaf_labels(j, **suffixes)
        arr = self.sites[j]
        return Tensor(
            tuple(IndexLabel(n, d) for n, d in zip(labels, arr.shape)), arr
        )


def init_lpdo(
    topology: Topology,
    bond_dim: int | Mapping[tuple[int, int], int] = 2,
    kraus_dim: int | Sequence[int] = 1,
    seed: int = 0,
    noise_scale: float = 0.01,
) -> Lpdo:
    """Identity-channel sites plus seeded i.i.d. complex Gaussian noise.

    The identity channel is embedded at Kraus index 0 and bond index 0 of
    every site; ``noise_scale`` 0 therefore gives the exact identity process.
    Bond and Kraus dimensions are uniform unless given per edge / per site.
    """
    rng = np.random.default_rng(seed)
    n = topology.n_qubits
    kraus = [kraus_dim] * n if isinstance(kraus_dim, int) else list(kraus_dim)
    bonds = (
        {e: bond_dim for e in topology.edges}
        if isinstance(bond_dim, int)
        else dict(bond_dim)
    )
    sites = []
    for j in range(n):
        shape = (D, D, kraus[j]) + tuple(bonds[e] for e in topology.incident_edges(j))
        arr = np.zeros(shape, dtype=np.complex128)
        arr[(slice(None), slice(None), 0) + (0,) * (arr.ndim - 3)] = np.eye(D)
        if noise_scale:
            noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            arr += noise_scale / np.sqrt(2.0) * noise
        sites.append(arr)
    return Lpdo(topology, tuple(sites))


def lpdo_from_circuit(
    topology: Topology, gates: Sequence[tuple[np.ndarray, tuple[int, ...]]]
) -> Lpdo:
    """Exact LPDO of a unitary circuit matched to the topology.

    Single-qubit gates multiply onto the site's output leg; each two-qubit
    gate must sit on a topology edge and is split by operator Schmidt
    decomposition, growing that edge's bond by the Schmidt rank (2 for CZ and
    CNOT).  The Kraus dimension stays 1, as for any unitary process.
    """
    n = topology.n_qubits
    sites = [np.eye(D, dtype=np.complex128).reshape(
        (D, D, 1) + (1,) * len(topology.incident_edges(j))
    ) for j in range(n)]

    def apply_half(j: int, half: np.ndarray, edge: tuple[int, int]) -> None:
        # half[t_new, t_old, r]: multiply on the output leg, stack r onto the bond
        pos = 3 + topology.incident_edges(j).index(edge)
        arr = np.moveaxis(sites[j], pos, -1)
        arr = np.einsum("nor,o...m->n...mr", half, arr)
        arr = arr.reshape(arr.shape[:-2] + (arr.shape[-2] * arr.shape[-1],))
        sites[j] = np.moveaxis(arr, -1, pos)

    for gate, qubits in gates:
        gate = np.asarray(gate, dtype=np.complex128)
        if len(qubits) == 1:
            (j,) = qubits
            sites[j] = np.einsum("no,os...->ns...", gate, sites[j])
        elif len(qubits) == 2:
            a, b = qubits
            if not topology.has_edge(a, b):
                raise ValueError(f"two-qubit gate on ({a}, {b}) is not a topology edge")
            g = gate.reshape(D, D, D, D)  # [ta, tb, ta', tb']
            if a > b:
                g = g.transpose(1, 0, 3, 2)
                a, b = b, a
            m = g.transpose(0, 2, 1, 3).reshape(D * D, D * D)
            u, sv, vh = np.linalg.svd(m)
            rank = int(np.sum(sv > 1e-12 * sv[0]))
            left = (u[:, :rank] * np.sqrt(sv[:rank])).reshape(D, D, rank)
            right = np.einsum(
                "r,rtb->tbr", np.sqrt(sv[:rank]), vh[:rank].reshape(rank, D, D)
            )
            edge = (a, b)
            apply_half(a, left, edge)
            apply_half(b, right, edge)
        else:
            raise ValueError("only 1- and 2-qubit gates are supported")
    return Lpdo(topology, tuple(sites))


# ---------------------------------------------------------------------------
# Network builders.  Leaves carry a provenance tag (site, is_conjugate) so
# that reverse-mode sweeps can be folded back onto the site arrays; constant
# leaves are tagged None.  Leaf axis order always equals the site-array axis
# order, so cotangents come back ready to accumulate.
# ---------------------------------------------------------------------------

Leaves = tuple[list[np.ndarray], list[tuple[str, ...]], list[tuple[int, bool] | None]]


def _append_site(
    leaves: Leaves, lpdo: Lpdo, j: int, conj: bool, **suffixes: str
) -> None:
    arrays, labels, prov = leaves
    arr = lpdo.sites[j]
    arrays.append(np.conj(arr) if conj else arr)
    labels.append(lpdo.leaf_labels(j, **suffixes))
    prov.append((j, conj))


def z_network(lpdo: Lpdo) -> Leaves:
    """Full trace of the Choi matrix: both layers share the physical legs."""
    leaves: Leaves = ([], [], [])
    for j in range(lpdo.n_qubits):
        _append_site(leaves, lpdo, j, conj=False)
        _append_site(leaves, lpdo, j, conj=True, b="'")
    return leaves


def t2_network(lpdo: Lpdo) -> Leaves:
    """Tr[X X^dagger] for X = Tr_tau Lambda, without materializing X.

    Two copies of the traced-output double layer, joined on the input legs;
    the second copy is the elementwise conjugate, realized by swapping which
    leaves are conjugated and carrying tilded output/kraus/bond names.
    """
    leaves: Leaves = ([], [], [])
    for j in range(lpdo.n_qubits):
        _append_site(leaves, lpdo, j, conj=False)
        _append_site(leaves, lpdo, j, conj=True, s="'", b="'")
        _append_site(leaves, lpdo, j, conj=True, t="~", k="~", b="~")
        _append_site(leaves, lpdo, j, conj=False, t="~", s="'", k="~", b="~'")
    return leaves


def probability_network(
    lpdo: Lpdo, states: Sequence[np.ndarray], effects: Sequence[np.ndarray]
) -> Leaves:
    """Tr[(state^T (x) effect) Lambda] with the operators attached per site."""
    leaves: Leaves = ([], [], [])
    arrays, labels, prov = leaves
    for j in range(lpdo.n_qubits):
        _append_site(leaves, lpdo, j, conj=False)
        _append_site(leaves, lpdo, j, conj=True, t="'", s="'", b="'")
        arrays.append(np.asarray(states[j], dtype=np.complex128))
        labels.append((f"s{j}", f"s{j}'"))
        prov.append(None)
        arrays.append(np.asarray(effects[j], dtype=np.complex128))
        labels.append((f"t{j}'", f"t{j}"))
        prov.append(None)
    return leaves


def contract_leaves(leaves: Leaves) -> tuple[np.ndarray, tuple[str, ...]]:
    """Contract a leaf list through the shared plan cache."""
    arrays, labels, _ = leaves
    tensors = tuple(
        Tensor(tuple(IndexLabel(n, d) for n, d in zip(ls, a.shape)), a)
        for a, ls in zip(arrays, labels)
    )
    plan = PLAN_CACHE.get_or_plan(TensorNetwork(tensors))
    nodes, node_labels = run_plan_arrays(arrays, labels, plan)
    return nodes[-1], node_labels[-1]


def _scalar(leaves: Leaves) -> complex:
    out, lout = contract_leaves(leaves)
    if lout:
        raise EvaluationError(f"expected a scalar contraction, got open labels {lout}")
    return complex(out)


# ---------------------------------------------------------------------------
# Contractions the model exposes
# ---------------------------------------------------------------------------

def choi_trace(lpdo: Lpdo) -> float:
    """Z = Tr Lambda via a single closed-network contraction."""
    return float(_scalar(z_network(lpdo)).real)


def choi_element(lpdo: Lpdo, sigma, tau, sigma_p, tau_p) -> complex:
    """One matrix element <sigma tau| Lambda |sigma' tau'>."""
    n = lpdo.n_qubits
    for name, tup in (("sigma", sigma), ("tau", tau), ("sigma'", sigma_p), ("tau'", tau_p)):
        if len(tup) != n:
            raise ValueError(f"{name} must have length {n}")
        if any(not 0 <= int(x) < D for x in tup):
            raise ValueError(f"{name} entries must lie in [0, {D})")
    arrays: list[np.ndarray] = []
    labels: list[tuple[str, ...]] = []
    for j in range(n):
        bond_names = lpdo.leaf_labels(j)[3:]
        arrays.append(lpdo.sites[j][int(tau[j]), int(sigma[j])])
        labels.append((f"k{j}",) + bond_names)
        arrays.append(np.conj(lpdo.sites[j][int(tau_p[j]), int(sigma_p[j])]))
        labels.append((f"k{j}",) + tuple(f"{b}'" for b in bond_names))
    return _scalar((arrays, labels, [None] * len(arrays)))


def materialize_choi(lpdo: Lpdo, cap: int = 6) -> DenseChoi:
    """Dense d^2N x d^2N matrix agreeing entrywise with ``choi_element``.

    The oracle bridge: feasible only for small N (the output has 16^N
    entries), which is all the desk-scale checks need.
    """
    n = lpdo.n_qubits
    if n > cap:
        raise EvaluationError(f"materialization of {n} qubits exceeds cap {cap}")
    leaves: Leaves = ([], [], [])
    for j in range(n):
        _append_site(leaves, lpdo, j, conj=False)
        _append_site(leaves, lpdo, j, conj=True, t="'", s="'", b="'")
    out, lout = contract_leaves(leaves)
    order = (
        [f"s{j}" for j in range(n)]
        + [f"t{j}" for j in range(n)]
        + [f"s{j}'" for j in range(n)]
        + [f"t{j}'" for j in range(n)]
    )
    out = np.transpose(out, [lout.index(x) for x in order])
    dim = D ** (2 * n)
    return DenseChoi(n, out.reshape(dim, dim))


@dataclass(frozen=True)
class TpDeviation:
    """Tr_tau Lambda - I in network form: one traced double-layer tensor per
    site, the identity subtracted only on materialization."""

    site_tensors: tuple[Tensor, ...]
    n_qubits: int

    def materialize(self, cap: int = 6) -> np.ndarray:
        if self.n_qubits > cap:
            raise EvaluationError(
                f"materialization of {self.n_qubits} qubits exceeds cap {cap}"
            )
        arrays = [t.data for t in self.site_tensors]
        labels = [t.names for t in self.site_tensors]
        out, lout = contract_leaves((arrays, labels, [None] * len(arrays)))
        n = self.n_qubits
        order = [f"s{j}" for j in range(n)] + [f"s{j}'" for j in range(n)]
        out = np.transpose(out, [lout.index(x) for x in order])
        dn = D**n
        return out.reshape(dn, dn) - np.eye(dn)


def tp_deviation(lpdo: Lpdo) -> TpDeviation:
    """The trace-preservation defect Delta = Tr_tau Lambda - I."""
    tensors = []
    for j in range(lpdo.n_qubits):
        plain = lpdo.site_tensor(j)
        conj = Tensor(
            plain.labels, np.conj(lpdo.sites[j])
        ).relabeled(
            {f"s{j}": f"s{j}'", **{b: f"{b}'" for b in lpdo.leaf_labels(j)[3:]}}
        )
        tensors.append(contract_pair(plain, conj))
    return TpDeviation(tuple(tensors), lpdo.n_qubits)


def tp_regularizer(lpdo: Lpdo) -> float:
    """sqrt(d^-N Tr[Delta Delta^dagger]), evaluated without forming Delta.

    Expands the square: Tr[X X^dagger] - 2 Re Tr X + d^N with X = Tr_tau
    Lambda, each term a closed network contraction.
    """
    n = lpdo.n_qubits
    t2 = _scalar(t2_network(lpdo)).real
    z = choi_trace(lpdo)
    r = t2 - 2.0 * z + D**n
    return float(np.sqrt(max(r, 0.0) / D**n))


def probability(
    lpdo: Lpdo, states: Sequence[np.ndarray], effects: Sequence[np.ndarray]
) -> float:
    """Outcome probability of the trace-normalized model,
    Tr[(state^T (x) effect) Lambda] * d^N / Z."""
    n = lpdo.n_qubits
    if len(states) != n or len(effects) != n:
        raise ValueError(f"need one state and one effect per qubit ({n})")
    z = choi_trace(lpdo)
    if z <= 0.0:
        raise EvaluationError(f"model trace {z} is not positive")
    s = _scalar(probability_network(lpdo, states, effects)).real
    return float(s * D**n / z)


def reduce_to_subset(
    lpdo: Lpdo,
    fixed_inputs: Mapping[int, np.ndarray],
    keep: Iterable[int],
    cap: int = 6,
) -> DenseChoi:
    """Dense Choi matrix of the process restricted to ``keep``.

    Each fixed qubit's input legs are contracted against its state and its
    output legs are traced; kept qubits stay open (ascending order in the
    result's index).
    """
    n = lpdo.n_qubits
    keep = sorted(set(keep))
    fixed = {int(q): np.asarray(m, dtype=np.complex128) for q, m in fixed_inputs.items()}
    if sorted(fixed) + keep != list(range(n)) or set(fixed) & set(keep):
        raise ValueError("fixed_inputs and keep must partition the qubit set")
    if len(keep) > cap:
        raise EvaluationError(f"{len(keep)} kept qubits exceed dense cap {cap}")
    leaves: Leaves = ([], [], [])
    arrays, labels, prov = leaves
    for j in range(n):
        if j in fixed:
            _append_site(leaves, lpdo, j, conj=False)
            _append_site(leaves, lpdo, j, conj=True, s="'", b="'")  # shared t: traced
            arrays.append(fixed[j])
            labels.append((f"s{j}", f"s{j}'"))
            prov.append(None)
        else:
            _append_site(leaves, lpdo, j, conj=False)
            _append_site(leaves, lpdo, j, conj=True, t="'", s="'", b="'")
    out, lout = contract_leaves(leaves)
    order = (
        [f"s{j}" for j in keep]
        + [f"t{j}" for j in keep]
        + [f"s{j}'" for j in keep]
        + [f"t{j}'" for j in keep]
    )
    out = np.transpose(out, [lout.index(x) for x in order])
    dim = D ** (2 * len(keep))
    return DenseChoi(len(keep), out.reshape(dim, dim))


def fidelity_to_unitary(lpdo: Lpdo, unitary: np.ndarray, cap: int = 10) -> float:
    """Process fidelity against a unitary channel, as one network overlap.

    A unitary channel's Choi matrix is the rank-1 dyad of the vector
    v = sum_i |i> (x) U|i>, so the fidelity of the trace-normalized model
    reduces to <v| Lambda |v> / (<v|v> Z); the vector is applied to the site
    network directly, never materializing Lambda.
    """
    n = lpdo.n_qubits
    u = np.asarray(unitary, dtype=np.complex128)
    dn = D**n
    if u.shape != (dn, dn):
        raise EvaluationError(f"unitary must be {dn}x{dn} for {n} qubits")
    if n > cap:
        raise EvaluationError(f"{n} qubits exceed the dense-vector cap {cap}")
    if np.abs(u.conj().T @ u - np.eye(dn)).max() > 1e-10:
        raise EvaluationError("reference matrix is not unitary within 1e-10")
    z = choi_trace(lpdo)
    if z <= 0.0:
        raise EvaluationError(f"model trace {z} is not positive")
    # v[sigma..., tau...] = U[tau, sigma]
    v = u.reshape((D,) * (2 * n)).transpose(list(range(n, 2 * n)) + list(range(n)))
    leaves: Leaves = ([], [], [])
    arrays, labels, prov = leaves
    arrays.append(np.conj(v))
    labels.append(tuple(f"s{j}" for j in range(n)) + tuple(f"t{j}" for j in range(n)))
    prov.append(None)
    for j in range(n):
        _append_site(leaves, lpdo, j, conj=False)
        _append_site(leaves, lpdo, j, conj=True, t="'", s="'", b="'")
    arrays.append(v)
    labels.append(tuple(f"s{j}'" for j in range(n)) + tuple(f"t{j}'" for j in range(n)))
    prov.append(None)
    overlap = _scalar(leaves).real
    return float(overlap / (dn * z))


# ---------------------------------------------------------------------------
# Checkpoints: bit-exact round-trip of topology, dims and site arrays
# ---------------------------------------------------------------------------

def save_checkpoint(lpdo: Lpdo, path: str | Path) -> None:
    payload = {
        "n_qubits": np.asarray(lpdo.n_qubits),
        "edges": np.asarray(lpdo.topology.edges, dtype=np.int64).reshape(-1, 2),
    }
    for j, arr in enumerate(lpdo.sites):
        payload[f"site_{j}"] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> Lpdo:
    with np.load(path) as data:
        n = int(data["n_qubits"])
        edges = tuple(tuple(int(x) for x in e) for e in data["edges"])
        sites = tuple(data[f"site_{j}"] for j in range(n))
    return Lpdo(Topology(n, edges), sites)
