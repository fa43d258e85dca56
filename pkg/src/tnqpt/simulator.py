"""Reference channels, single-shot samplers, and dense baselines.

This is the oracle side that stands in for a quantum device at desk scale:
build a circuit (optionally followed by independent per-qubit noise), obtain
its dense Choi matrix or unitary, emulate the single-shot data-collection
protocol, and reconstruct small channels by traditional linear-inversion
process tomography for comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .choi import D, DenseChoi
from .dataio import Dataset, broadcast_registry, builtin_pauli6, qpt4_states
from .topology import Topology

__all__ = [
    "Gate",
    "ChannelSpec",
    "random_su2",
    "build_rqc_cycle",
    "circuit_gates",
    "build_circuit_unitary",
    "choi_from_spec",
    "choi_vector_from_unitary",
    "kraus_depolarizing",
    "kraus_amplitude_damping",
    "sample_shots",
    "outcome_probabilities",
    "exact_qpt_probabilities",
    "sampled_qpt_probabilities",
    "full_qpt_linear_inversion",
    "dense_process_fidelity",
    "compound_error_baseline",
    "depolarize_states",
    "bitflip_effects",
    "save_channel_spec",
    "load_channel_spec",
]

_SQ = 1.0 / np.sqrt(2.0)
GATES_1Q: dict[str, np.ndarray] = {
    "id": np.eye(2, dtype=np.complex128),
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    "h": np.array([[_SQ, _SQ], [_SQ, -_SQ]], dtype=np.complex128),
    "s": np.array([[1, 0], [0, 1j]], dtype=np.complex128),
    "sdg": np.array([[1, 0], [0, -1j]], dtype=np.complex128),
    "t": np.array([[1, 0], [0, np.exp(1j * np.pi / 4)]], dtype=np.complex128),
    "sx": 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=np.complex128),
}
GATES_2Q: dict[str, np.ndarray] = {
    "cz": np.diag([1, 1, 1, -1]).astype(np.complex128),
    "cnot": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
    ),
}


def random_su2(seed: int) -> np.ndarray:
    """Haar-distributed 2x2 unitary: QR of a complex Gaussian, phases fixed."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    q, r = np.linalg.qr(g)
    phase = np.diag(r).copy()
    phase /= np.abs(phase)
    return q * phase


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple[int, ...]
    seed: int | None = None  # only meaningful for name == "su2"

    def matrix(self) -> np.ndarray:
        if self.name == "su2":
            if self.seed is None:
                raise ValueError("su2 gate needs a seed")
            return random_su2(self.seed)
        if self.name in GATES_1Q:
            return GATES_1Q[self.name]
        if self.name in GATES_2Q:
            return GATES_2Q[self.name]
        raise ValueError(f"unknown gate {self.name!r}")


@dataclass(frozen=True)
class ChannelSpec:
    """A circuit plus optional independent per-qubit noise after it."""

    n_qubits: int
    gates: tuple[Gate, ...]
    noise: tuple[str, float] | None = None  # ("depolarizing", p) | ("amplitude_damping", g)

    def __post_init__(self) -> None:
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if len(g.qubits) not in (1, 2):
                raise ValueError("gates must act on one or two qubits")
            for q in g.qubits:
                if not 0 <= q < self.n_qubits:
                    raise ValueError(f"gate {g.name} on qubit {q} out of range")
        if self.noise is not None and self.noise[0] not in (
            "depolarizing",
            "amplitude_damping",
        ):
            raise ValueError(f"unknown noise kind {self.noise[0]!r}")

    @property
    def is_unitary(self) -> bool:
        return self.noise is None

    def validate_topology(self, topology: Topology) -> None:
        for g in self.gates:
            if len(g.qubits) == 2 and not topology.has_edge(*g.qubits):
                raise ValueError(
                    f"two-qubit gate {g.name} on {g.qubits} is not a topology edge"
                )


def build_rqc_cycle(topology: Topology, schedule: Sequence[tuple[int, int]], seed: int) -> ChannelSpec:
    """One cycle of a random quantum circuit on the given interaction schedule.

    For each scheduled edge, in order: a fresh Haar-random rotation on each of
    the two qubits, then CZ.  Gate seeds derive deterministically from
    (seed, position), so equal seeds give identical circuits.
    """
    gates: list[Gate] = []
    counter = 0
    for a, b in schedule:
        if not topology.has_edge(a, b):
            raise ValueError(f"scheduled edge ({a}, {b}) is not in the topology")
        for q in (a, b):
            sub = int(np.random.SeedSequence([seed, counter]).generate_state(1)[0])
            gates.append(Gate("su2", (q,), sub))
            counter += 1
        gates.append(Gate("cz", (min(a, b), max(a, b))))
    return ChannelSpec(topology.n_qubits, tuple(gates))


def circuit_gates(spec: ChannelSpec) -> list[tuple[np.ndarray, tuple[int, ...]]]:
    """The ordered (matrix, qubits) list of the circuit part of a spec."""
    return [(g.matrix(), g.qubits) for g in spec.gates]


def _embed_gate(u: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """Dense 2^n x 2^n embedding of a 1- or 2-qubit gate."""
    k = len(qubits)
    full = u.reshape((D,) * (2 * k))
    op = np.eye(D**n, dtype=np.complex128).reshape((D,) * (2 * n))
    # contract gate input legs with the identity's output legs at the sites;
    # tensordot puts the gate's output legs first, then the surviving op axes
    op = np.tensordot(full, op, axes=(range(k, 2 * k), list(qubits)))
    untouched = [q for q in range(n) if q not in qubits]

    def out_axis(q: int) -> int:
        return qubits.index(q) if q in qubits else k + untouched.index(q)

    perm = [out_axis(q) for q in range(n)] + [k + (n - k) + q for q in range(n)]
    return np.transpose(op, perm).reshape(D**n, D**n)


def build_circuit_unitary(spec: ChannelSpec, cap: int = 10) -> np.ndarray:
    """Ordered product of the gate embeddings (noiseless specs only)."""
    if not spec.is_unitary:
        raise ValueError("spec has a noise stage; no circuit unitary exists")
    if spec.n_qubits > cap:
        raise ValueError(f"{spec.n_qubits} qubits exceed the dense cap {cap}")
    u = np.eye(D**spec.n_qubits, dtype=np.complex128)
    for g in spec.gates:
        u = _embed_gate(g.matrix(), g.qubits, spec.n_qubits) @ u
    return u


def kraus_depolarizing(p: float) -> list[np.ndarray]:
    """Standard four-operator depolarizing channel of strength p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("depolarizing strength must lie in [0, 1]")
    i, x, y, z = (GATES_1Q[k] for k in ("id", "x", "y", "z"))
    return [
        np.sqrt(1.0 - 3.0 * p / 4.0) * i,
        np.sqrt(p / 4.0) * x,
        np.sqrt(p / 4.0) * y,
        np.sqrt(p / 4.0) * z,
    ]


def kraus_amplitude_damping(gamma: float) -> list[np.ndarray]:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("damping strength must lie in [0, 1]")
    k0 = np.array([[1, 0], [0, np.sqrt(1.0 - gamma)]], dtype=np.complex128)
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=np.complex128)
    return [k0, k1]


def _noise_kraus(spec: ChannelSpec) -> list[np.ndarray] | None:
    if spec.noise is None:
        return None
    kind, param = spec.noise
    if kind == "depolarizing":
        return kraus_depolarizing(param)
    return kraus_amplitude_damping(param)


def choi_vector_from_unitary(u: np.ndarray) -> np.ndarray:
    """|v> = sum_i |i> (x) U|i>, the pure Choi vector of a unitary channel.

    Entry (sigma, tau), row-major over (input, output), equals U[tau, sigma].
    """
    return np.ascontiguousarray(u.T).reshape(-1)


def choi_from_spec(spec: ChannelSpec, cap: int = 6) -> DenseChoi:
    """Unnormalized Choi matrix sum_ij |i><j| (x) E(|i><j|) of the channel."""
    n = spec.n_qubits
    if n > cap:
        raise ValueError(f"{n} qubits exceed the dense Choi cap {cap}")
    u = build_circuit_unitary(ChannelSpec(n, spec.gates), cap=cap)
    v = choi_vector_from_unitary(u)
    mat = np.outer(v, v.conj())
    kraus = _noise_kraus(spec)
    if kraus is not None:
        dn = D**n
        blocks = mat.reshape((dn, dn, dn, dn))  # [s, t, s', t']
        for q in range(n):
            dl, dr = D**q, D ** (n - 1 - q)
            work = blocks.reshape(dn, dl, D, dr, dn, dl, D, dr)
            acc = np.zeros_like(work)
            for k in kraus:
                # K on the ket output leg, conj(K) on the bra output leg
                acc += np.einsum("ab,slbdSLfv,ef->sladSLev", k, work, np.conj(k))
            blocks = acc.reshape(dn, dn, dn, dn)
        mat = blocks.reshape(dn * dn, dn * dn)
        mat = 0.5 * (mat + mat.conj().T)
    return DenseChoi(n, mat)


# ---------------------------------------------------------------------------
# Shot sampling: the data-collection protocol with exact per-shot distributions
# ---------------------------------------------------------------------------

def _psd_sqrt_2x2(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def _pure_vectors(states: np.ndarray) -> np.ndarray | None:
    """(n, K, d) principal vectors if every registry state is rank one."""
    n, k = states.shape[:2]
    vecs = np.zeros((n, k, D), dtype=np.complex128)
    for q in range(n):
        for a in range(k):
            w, v = np.linalg.eigh(states[q, a])
            if w[0] > 1e-10 or abs(w[-1] - 1.0) > 1e-10:
                return None
            vecs[q, a] = v[:, -1]
    return vecs


def _sample_outcomes_pure(
    psi: np.ndarray, effs: np.ndarray, sqrts: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Chain-rule sampling on state vectors psi (C, 2^n).

    Effects on distinct qubits commute, so sampling qubit by qubit from the
    reduced 2x2 Gram matrix and conditioning with sqrt(effect) draws exactly
    from the joint POVM distribution.
    """
    c, dim = psi.shape
    n = int(np.log2(dim))
    km = effs.shape[1]
    out = np.zeros((c, n), dtype=np.int64)
    for q in range(n):
        dl, dr = D**q, D ** (n - 1 - q)
        work = psi.reshape(c, dl, D, dr)
        gram = np.einsum("cltr,clsr->cts", work, work.conj())
        probs = np.einsum("kst,cts->ck", effs[q], gram).real
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum(axis=1, keepdims=True)
        draw = (probs.cumsum(axis=1) < u[:, q, None]).sum(axis=1).clip(max=km - 1)
        out[:, q] = draw
        w = sqrts[q][draw]  # (c, 2, 2)
        work = np.einsum("cts,clsr->cltr", w, work)
        psi = work.reshape(c, dim)
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    return out


def _sample_outcomes_dense(
    rho: np.ndarray, effs: np.ndarray, sqrts: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Chain-rule sampling on density matrices rho (C, 2^n, 2^n)."""
    c, dim = rho.shape[:2]
    n = int(np.log2(dim))
    km = effs.shape[1]
    out = np.zeros((c, n), dtype=np.int64)
    for q in range(n):
        dl, dr = D**q, D ** (n - 1 - q)
        work = rho.reshape(c, dl, D, dr, dl, D, dr)
        gram = np.einsum("cltrlsr->cts", work)
        probs = np.einsum("kst,cts->ck", effs[q], gram).real
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum(axis=1, keepdims=True)
        draw = (probs.cumsum(axis=1) < u[:, q, None]).sum(axis=1).clip(max=km - 1)
        out[:, q] = draw
        w = sqrts[q][draw]
        work = np.einsum("cat,cltrmsn,cbs->clarmbn", w, work, w.conj())
        rho = work.reshape(c, dim, dim)
        tr = np.einsum("cii->c", rho).real
        rho /= tr[:, None, None]
    return out


def sample_shots(
    channel: ChannelSpec | DenseChoi,
    states: np.ndarray,
    effects: np.ndarray,
    m: int,
    seed: int,
    actual_states: np.ndarray | None = None,
    actual_effects: np.ndarray | None = None,
    chunk: int = 1024,
) -> Dataset:
    """Emulate the single-shot protocol: per shot, draw the input tuple
    uniformly, then sample the outcome tuple from its exact distribution.

    ``states``/``effects`` are the registries recorded in the dataset (what
    the experimenter believes was prepared and measured).  If
    ``actual_states``/``actual_effects`` are given, those are what the shots
    are physically drawn from, while the recorded indices still refer to the
    ideal registries - the preparation/measurement error model that SPAM
    corrections exist for.

    All randomness comes from one counter-based Philox stream in a fixed draw
    order, so a seed fully determines the dataset regardless of chunking.
    """
    n = states.shape[0]
    kp = states.shape[1]
    true_states = states if actual_states is None else actual_states
    true_effects = effects if actual_effects is None else actual_effects
    rng = np.random.Generator(np.random.Philox(seed))
    inputs = rng.integers(0, kp, size=(m, n))
    uniforms = rng.random((m, n))
    if m == 0:
        return Dataset(states, effects, np.zeros((0, n), int), np.zeros((0, n), int))

    sqrts = np.stack(
        [[_psd_sqrt_2x2(true_effects[q, k]) for k in range(true_effects.shape[1])]
         for q in range(n)]
    )

    if isinstance(channel, ChannelSpec):
        if channel.n_qubits != n:
            raise ValueError("channel and registries disagree on qubit count")
        vecs = _pure_vectors(true_states) if channel.is_unitary else None
        if vecs is not None:
            u = build_circuit_unitary(channel)
            mode = ("pure", u)
        else:
            if n > 6:
                raise ValueError(
                    f"exact outcome distributions for a noisy {n}-qubit channel "
                    "need the dense path, capped at 6 qubits"
                )
            mode = ("choi", choi_from_spec(channel))
    else:
        if channel.n_qubits != n:
            raise ValueError("channel and registries disagree on qubit count")
        mode = ("choi", channel)

    outcomes = np.zeros((m, n), dtype=np.int64)
    dim = D**n
    chunk = max(1, min(chunk, (1 << 22) // dim))
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        a_chunk = inputs[lo:hi]
        c = hi - lo
        if mode[0] == "pure":
            psi = np.ones((c, 1), dtype=np.complex128)
            for q in range(n):
                sel = vecs[q][a_chunk[:, q]]  # (c, 2)
                psi = (psi[:, :, None] * sel[:, None, :]).reshape(c, -1)
            psi = psi @ mode[1].T
            outcomes[lo:hi] = _sample_outcomes_pure(psi, true_effects, sqrts, uniforms[lo:hi])
        else:
            rho = np.ones((c, 1, 1), dtype=np.complex128)
            for q in range(n):
                sel = true_states[q][a_chunk[:, q]]  # (c, 2, 2)
                rho = np.einsum("cab,cde->cadbe", rho, sel).reshape(
                    c, rho.shape[1] * D, rho.shape[2] * D
                )
            blocks = mode[1].as_blocks()
            rho = np.einsum("csS,stST->ctT", rho, blocks)
            tr = np.einsum("cii->c", rho).real
            rho /= tr[:, None, None]
            outcomes[lo:hi] = _sample_outcomes_dense(rho, true_effects, sqrts, uniforms[lo:hi])
    return Dataset(states, effects, inputs, outcomes)


def outcome_probabilities(
    choi: DenseChoi, states: np.ndarray, effects: np.ndarray, alpha: Sequence[int]
) -> np.ndarray:
    """Exact P(beta | alpha) over all K_m^n outcome tuples (oracle path)."""
    n = choi.n_qubits
    rho = np.array([[1.0]], dtype=np.complex128)
    for q in range(n):
        rho = np.kron(rho, states[q][alpha[q]])
    blocks = choi.as_blocks()
    out = np.einsum("sS,stST->tT", rho, blocks)
    out /= choi.trace() / D**n
    probs = out.reshape((1,) + out.shape)
    # contract effects qubit by qubit; accumulated outcome axes lead
    for q in range(n):
        dr = D ** (n - 1 - q)
        work = probs.reshape(probs.shape[0], D, dr, D, dr)
        probs = np.einsum("kst,xtrsw->xkrw", effects[q], work).reshape(
            probs.shape[0] * effects.shape[1], dr, dr
        )
    return probs.reshape(-1).real


# ---------------------------------------------------------------------------
# Traditional full QPT by linear inversion
# ---------------------------------------------------------------------------

def exact_qpt_probabilities(
    choi: DenseChoi, states4: np.ndarray | None = None, effects6: np.ndarray | None = None
) -> np.ndarray:
    """P(beta|alpha) table of shape (K_p^n, K_m^n) from exact simulation."""
    n = choi.n_qubits
    if states4 is None:
        states4 = broadcast_registry(qpt4_states(), n)
    if effects6 is None:
        effects6 = broadcast_registry(builtin_pauli6()[1], n)
    kp = states4.shape[1]
    rows = []
    for flat in range(kp**n):
        alpha = np.unravel_index(flat, (kp,) * n)
        rows.append(outcome_probabilities(choi, states4, effects6, alpha))
    return np.asarray(rows)


def sampled_qpt_probabilities(
    choi: DenseChoi,
    shots_per_setting: int,
    seed: int,
    states4: np.ndarray | None = None,
    effects6: np.ndarray | None = None,
) -> np.ndarray:
    """Estimated P(beta|alpha): the fixed-settings protocol.

    For every input tuple and every measurement-axis combination, draws
    ``shots_per_setting`` shots from the exact conditional distribution over
    sign outcomes; effects are assumed axis-grouped in consecutive pairs (the
    builtin ordering X+, X-, Y+, Y-, Z+, Z-).
    """
    n = choi.n_qubits
    if states4 is None:
        states4 = broadcast_registry(qpt4_states(), n)
    if effects6 is None:
        effects6 = broadcast_registry(builtin_pauli6()[1], n)
    kp = states4.shape[1]
    km = effects6.shape[1]
    n_axes = km // 2
    rng = np.random.Generator(np.random.Philox(seed))
    table = np.zeros((kp**n, km**n))
    for flat in range(kp**n):
        alpha = np.unravel_index(flat, (kp,) * n)
        exact = outcome_probabilities(choi, states4, effects6, alpha).reshape((km,) * n)
        for axes_flat in range(n_axes**n):
            axes = np.unravel_index(axes_flat, (n_axes,) * n)
            idx = np.ix_(*[(2 * a, 2 * a + 1) for a in axes])
            cond = exact[idx].reshape(-1)
            cond = np.clip(cond, 0.0, None)
            cond /= cond.sum()
            counts = rng.multinomial(shots_per_setting, cond)
            freq = counts / shots_per_setting / n_axes**n
            sub = table[flat].reshape((km,) * n)
            sub[idx] = freq.reshape((2,) * n)
    return table


def probabilities_from_dataset(dataset: Dataset) -> np.ndarray:
    """Empirical P(beta|alpha) from uniformly-drawn records."""
    n = dataset.n_qubits
    kp = dataset.states.shape[1]
    km = dataset.effects.shape[1]
    flat_a = np.ravel_multi_index(dataset.inputs.T, (kp,) * n)
    flat_b = np.ravel_multi_index(dataset.outcomes.T, (km,) * n)
    counts = np.zeros((kp**n, km**n))
    np.add.at(counts, (flat_a, flat_b), 1.0)
    per_alpha = counts.sum(axis=1)
    if (per_alpha == 0).any():
        missing = int(np.argwhere(per_alpha == 0)[0])
        raise ValueError(f"no shots recorded for input setting {missing}")
    return counts / per_alpha[:, None]


def full_qpt_linear_inversion(
    probabilities: np.ndarray | Dataset,
    n: int | None = None,
    states: np.ndarray | None = None,
    effects: np.ndarray | None = None,
) -> DenseChoi:
    """Least-squares inversion of the probability table to a physical Choi.

    The sensing map factorizes per qubit, so its pseudo-inverse is the
    Kronecker product of per-qubit pseudo-inverses; afterwards the estimate is
    projected to the PSD cone by noise-adaptive eigenvalue clipping and
    trace-renormalized to d^n.  Exact probability tables invert exactly (up to
    roundoff).
    """
    if isinstance(probabilities, Dataset):
        dataset = probabilities
        n = dataset.n_qubits
        states = dataset.states if states is None else states
        effects = dataset.effects if effects is None else effects
        probabilities = probabilities_from_dataset(dataset)
    if n is None:
        raise ValueError("n is required when passing a raw probability table")
    if n > 3:
        raise ValueError("traditional full QPT is capped at 3 qubits")
    if states is None:
        states = broadcast_registry(qpt4_states(), n)
    if effects is None:
        effects = broadcast_registry(builtin_pauli6()[1], n)
    kp, km = states.shape[1], effects.shape[1]
    table = np.asarray(probabilities, dtype=np.float64)
    if table.shape != (kp**n, km**n):
        raise ValueError(
            f"expected table of shape {(kp ** n, km ** n)}, got {table.shape}"
        )
    # per-qubit sensing matrix: rows (alpha, beta), columns (s, t, s', t')
    work = table.reshape([kp] * n + [km] * n)
    order = [x for pair in zip(range(n), range(n, 2 * n)) for x in pair]
    work = np.transpose(work, order).reshape([kp * km] * n).astype(np.complex128)
    for q in range(n):
        s_q = np.einsum("asp,bqt->abstpq", states[q], effects[q])
        s_q = s_q.reshape(kp * km, 16)  # columns flattened as (s, t, s', t')
        pinv = np.linalg.pinv(s_q)
        work = np.moveaxis(np.tensordot(pinv, work, axes=(1, q)), 0, q)
    work = work.reshape([D, D, D, D] * n)
    # regroup per-qubit (s, t, s', t') into global [sigma, tau, sigma', tau']
    perm = (
        [4 * q + 0 for q in range(n)]
        + [4 * q + 1 for q in range(n)]
        + [4 * q + 2 for q in range(n)]
        + [4 * q + 3 for q in range(n)]
    )
    dim = D ** (2 * n)
    est = np.transpose(work, perm).reshape(dim, dim)
    est = 0.5 * (est + est.conj().T)
    w, v = np.linalg.eigh(est)
    # the most negative eigenvalue witnesses the pure-noise scale; clipping at
    # 1.5x that level removes the matching positive noise tail as well, while
    # exact tables (noise ~ 1e-15) stay an exact inversion
    thresh = 1.5 * max(0.0, -float(w[0]))
    clipped = np.where(w > thresh, w, 0.0)
    if clipped.sum() <= 0.0:
        clipped = np.clip(w, 0.0, None)
    mat = (v * clipped) @ v.conj().T
    mat *= D**n / np.trace(mat).real
    return DenseChoi(n, mat)


# ---------------------------------------------------------------------------
# Fidelities and baselines
# ---------------------------------------------------------------------------

def dense_process_fidelity(a: DenseChoi, b: DenseChoi) -> float:
    """(Tr sqrt(sqrt(a) b sqrt(a)))^2 on trace-normalized operands."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch {a.dim} vs {b.dim}")
    am = a.matrix / a.trace()
    bm = b.matrix / b.trace()
    w, v = np.linalg.eigh(am)
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.conj().T
    inner = root @ bm @ root
    w2 = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    w2 = np.clip(w2, 0.0, None)
    return float(np.sqrt(w2).sum() ** 2)


def compound_error_baseline(gate_error_rates: Sequence[float]) -> float:
    """prod_g (1 - r_g): the calibration-data fidelity estimate."""
    out = 1.0
    for r in gate_error_rates:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"error rate {r} outside [0, 1]")
        out *= 1.0 - r
    return out


# ---------------------------------------------------------------------------
# SPAM noise models for synthetic studies
# ---------------------------------------------------------------------------

def depolarize_states(states: np.ndarray, p: float) -> np.ndarray:
    """(1-p) rho + p I/2 applied to every registry state."""
    eye = np.eye(D) / D
    return (1.0 - p) * states + p * np.broadcast_to(eye, states.shape)


def bitflip_effects(effects: np.ndarray, q: float) -> np.ndarray:
    """Classical readout confusion within each axis-grouped effect pair."""
    out = effects.copy()
    for k in range(0, effects.shape[-3], 2):
        a = effects[..., k, :, :]
        b = effects[..., k + 1, :, :]
        out[..., k, :, :] = (1.0 - q) * a + q * b
        out[..., k + 1, :, :] = (1.0 - q) * b + q * a
    return out


# ---------------------------------------------------------------------------
# Channel-spec files
# ---------------------------------------------------------------------------

def save_channel_spec(spec: ChannelSpec, path: str | Path) -> None:
    doc = {
        "n_qubits": spec.n_qubits,
        "gates": [
            {"name": g.name, "qubits": list(g.qubits)}
            | ({"seed": g.seed} if g.seed is not None else {})
            for g in spec.gates
        ],
    }
    if spec.noise is not None:
        doc["noise"] = {"kind": spec.noise[0], "param": spec.noise[1]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_channel_spec(path: str | Path) -> ChannelSpec:
    with open(path) as fh:
        doc = json.load(fh)
    gates = tuple(
        Gate(g["name"], tuple(int(q) for q in g["qubits"]), g.get("seed"))
        for g in doc["gates"]
    )
    noise = None
    if "noise" in doc:
        noise = (doc["noise"]["kind"], float(doc["noise"]["param"]))
    return ChannelSpec(int(doc["n_qubits"]), gates, noise)
