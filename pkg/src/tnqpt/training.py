"""Gradient training of the site network on single-shot records.

The cost is the mean negative log-likelihood of the recorded outcomes under
the trace-normalized model plus a weighted trace-preservation penalty:

    C = -(1/M) sum_k log max(P(beta_k | alpha_k), floor) + kappa * Gamma

Gradients are conjugate Wirtinger derivatives dC/dA_j* (the steepest-descent
direction of a real cost over complex parameters), obtained by replaying the
cached contraction trees in reverse.  Batches evaluate in two planned stages:
stage one contracts, per site, the local (state, effect) attachment for every
registry combination at once; stage two contracts the per-record transfer
tensors over the bond network, with records as a batch axis.  Environments
flow back through stage two, are scatter-summed per combination, and continue
through stage one onto the site tensors, so the whole mini-batch costs a few
BLAS calls per tree node.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .choi import D
from .dataio import Dataset
from .lpdo import (
    PLAN_CACHE,
    EvaluationError,
    Lpdo,
    fidelity_to_unitary,
    t2_network,
    z_network,
)
from .planner import BATCH, TensorNetwork, backward_plan_arrays, run_plan_arrays
from .tensor import IndexLabel, Tensor

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "AdamState",
    "BatchEvaluator",
    "cost",
    "gradient",
    "cost_and_gradient",
    "adam_step",
    "train",
    "data_size_sweep",
]

GAMMA_TOL = 1e-12  # below this the sqrt penalty is treated as exactly flat

# seed-derivation tags (np.random.SeedSequence entropy words)
_TAG_SPLIT = 101
_TAG_EPOCH = 202
_TAG_SWEEP = 303


@dataclass(frozen=True)
class TrainConfig:
    kappa: float = 0.1
    batch_size: int = 0  # 0 or > training size: one full batch per epoch
    epochs: int = 100
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_fraction: float = 0.2
    seed: int = 0
    prob_floor: float = 1e-12
    chunk: int = 256
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.kappa < 0.0:
            raise ValueError("kappa must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")


@dataclass(frozen=True)
class TrainHistory:
    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    fidelity: tuple[float, ...] | None
    best_epoch: int

    def __post_init__(self) -> None:
        if not (0 <= self.best_epoch < len(self.val_loss)):
            raise ValueError("best_epoch outside history range")
        for series in (self.train_loss, self.val_loss):
            if not all(np.isfinite(x) for x in series):
                raise ValueError("history contains non-finite losses")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "fidelity"])
            for e in range(len(self.train_loss)):
                fid = "" if self.fidelity is None else repr(self.fidelity[e])
                writer.writerow([e, repr(self.train_loss[e]), repr(self.val_loss[e]), fid])


def _as_record_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, Dataset):
        return batch.inputs, batch.outcomes
    if isinstance(batch, tuple) and len(batch) == 2:
        return np.asarray(batch[0], dtype=np.int64), np.asarray(batch[1], dtype=np.int64)
    records = list(batch)
    if not records:
        raise ValueError("batch must be nonempty")
    inputs = np.asarray([r.inputs for r in records], dtype=np.int64)
    outcomes = np.asarray([r.outcomes for r in records], dtype=np.int64)
    return inputs, outcomes


def _plan_unbatched(arrays, labels):
    tensors = []
    for arr, ls in zip(arrays, labels):
        if ls and ls[0] == BATCH:
            arr, ls = arr[0], ls[1:]
        tensors.append(
            Tensor(tuple(IndexLabel(n, d) for n, d in zip(ls, arr.shape)), arr)
        )
    return PLAN_CACHE.get_or_plan(TensorNetwork(tuple(tensors)))


def _group_sum(values: np.ndarray, codes: np.ndarray, n_codes: int) -> np.ndarray:
    """Sum rows of ``values`` grouped by ``codes`` -> (n_codes, row_size)."""
    flat = values.reshape(len(codes), -1)
    order = np.argsort(codes, kind="stable")
    sorted_vals = flat[order]
    counts = np.bincount(codes, minlength=n_codes)
    out = np.zeros((n_codes, flat.shape[1]), dtype=flat.dtype)
    nonempty = np.flatnonzero(counts)
    if len(nonempty):
        offsets = np.concatenate([[0], np.cumsum(counts[nonempty])[:-1]])
        out[nonempty] = np.add.reduceat(sorted_vals, offsets, axis=0)
    return out


def _conj_wirtinger(cot_plain: np.ndarray | None, cot_conj: np.ndarray | None) -> np.ndarray:
    """dRe(.)/dA* from the environments of the plain and conjugated leaves."""
    if cot_plain is None:
        return 0.5 * cot_conj
    if cot_conj is None:
        return 0.5 * np.conj(cot_plain)
    return 0.5 * (cot_conj + np.conj(cot_plain))


class BatchEvaluator:
    """Probability/cost/gradient evaluation for one fixed set of site tensors.

    Construction runs the cached stage-one contractions (per-site transfer
    tensors for all state x effect combinations), the trace network, and the
    trace-preservation network; record batches then only gather and contract
    transfer tensors.
    """

    def __init__(
        self,
        lpdo: Lpdo,
        states: np.ndarray,
        effects: np.ndarray,
        chunk: int = 256,
        workers: int = 1,
    ) -> None:
        self.lpdo = lpdo
        self.n = lpdo.n_qubits
        self.states = np.asarray(states, dtype=np.complex128)
        self.effects = np.asarray(effects, dtype=np.complex128)
        self.kp = self.states.shape[1]
        self.km = self.effects.shape[1]
        self.n_codes = self.kp * self.km
        self.chunk = max(1, chunk)
        self.workers = max(1, workers)

        self._site_runs = []
        e_arrays, e_labels = [], []
        for j in range(self.n):
            arrays = [lpdo.sites[j], np.conj(lpdo.sites[j])]
            labels = [
                lpdo.leaf_labels(j),
                lpdo.leaf_labels(j, t="'", s="'", b="'"),
            ]
            rho = np.repeat(self.states[j], self.km, axis=0)  # code = alpha*km + beta
            eff = np.tile(self.effects[j], (self.kp, 1, 1))
            arrays.append(rho)
            labels.append((BATCH, f"s{j}", f"s{j}'"))
            arrays.append(eff)
            labels.append((BATCH, f"t{j}'", f"t{j}"))
            plan = _plan_unbatched(arrays, labels)
            nodes, node_labels = run_plan_arrays(arrays, labels, plan)
            self._site_runs.append((nodes, node_labels, plan))
            e_arrays.append(nodes[-1])
            e_labels.append(node_labels[-1])
        self._e_arrays = e_arrays
        self._e_labels = e_labels
        self._plan2 = _plan_unbatched(e_arrays, e_labels)
        # when one site's transfer tensor is large, records are grouped by its
        # combination code so it enters the contraction as a constant (one
        # GEMM per group) instead of a huge per-record gather
        sizes = [arr[0].size for arr in e_arrays]
        self._heavy = int(np.argmax(sizes)) if max(sizes) >= 4096 else None

        zl = z_network(lpdo)
        self._z_leaves = zl
        self._z_plan = _plan_unbatched(zl[0], zl[1])
        self._z_nodes, self._z_labels = run_plan_arrays(zl[0], zl[1], self._z_plan)
        self.z = float(np.real(self._z_nodes[-1]))
        if self.z <= 0.0:
            raise EvaluationError(f"model trace {self.z} is not positive")

        tl = t2_network(lpdo)
        self._t2_leaves = tl
        self._t2_plan = _plan_unbatched(tl[0], tl[1])
        self._t2_nodes, self._t2_labels = run_plan_arrays(tl[0], tl[1], self._t2_plan)
        self.t2 = float(np.real(self._t2_nodes[-1]))
        r = self.t2 - 2.0 * self.z + D**self.n
        self.gamma = float(np.sqrt(max(r, 0.0) / D**self.n))

    # -- record batches ----------------------------------------------------

    def _codes(self, inputs: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
        return inputs * self.km + outcomes  # (M, n)

    def _run_chunk(self, codes: np.ndarray, weights_fn):
        heavy = self._heavy
        arrays, labels = [], []
        for j in range(self.n):
            if j == heavy:
                # grouped path: every record in this chunk shares the code
                arrays.append(self._e_arrays[j][codes[0, j]])
                labels.append(self._e_labels[j][1:])
            else:
                arrays.append(self._e_arrays[j][codes[:, j]])
                labels.append(self._e_labels[j])
        nodes, node_labels = run_plan_arrays(arrays, labels, self._plan2)
        overlap = np.real(nodes[-1])
        if weights_fn is None:
            return overlap, None
        w = weights_fn(overlap).astype(np.complex128)
        cots = backward_plan_arrays(nodes, node_labels, self._plan2, w, self.n)
        partial = []
        for j in range(self.n):
            shape = self._e_arrays[j].shape
            if j == heavy:
                g = np.zeros(shape, dtype=np.complex128)
                g[codes[0, j]] = cots[j]
                partial.append(g)
            else:
                partial.append(_group_sum(cots[j], codes[:, j], self.n_codes).reshape(shape))
        return overlap, partial

    def _spans(self, codes: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int]]]:
        """Record order and chunk spans; grouped by the heavy site's code."""
        m = len(codes)
        if self._heavy is None:
            return np.arange(m), [(lo, min(lo + self.chunk, m)) for lo in range(0, m, self.chunk)]
        order = np.argsort(codes[:, self._heavy], kind="stable")
        boundaries = np.flatnonzero(np.diff(codes[order, self._heavy])) + 1
        spans = []
        start = 0
        for stop in list(boundaries) + [m]:
            for lo in range(start, stop, self.chunk):
                spans.append((lo, min(lo + self.chunk, stop)))
            start = stop
        return order, spans

    def _map_chunks(self, codes: np.ndarray, weights_fn):
        order, spans = self._spans(codes)
        sorted_codes = codes[order]
        if self.workers == 1 or len(spans) == 1:
            results = [self._run_chunk(sorted_codes[lo:hi], weights_fn) for lo, hi in spans]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(
                    pool.map(
                        lambda s: self._run_chunk(sorted_codes[s[0]:s[1]], weights_fn),
                        spans,
                    )
                )
        overlap = np.empty(len(codes))
        overlap[order] = np.concatenate([r[0] for r in results])
        if weights_fn is None:
            return overlap, None
        sums = results[0][1]
        for r in results[1:]:
            for j in range(self.n):
                sums[j] = sums[j] + r[1][j]
        return overlap, sums

    def probabilities(self, inputs: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
        overlap, _ = self._map_chunks(self._codes(inputs, outcomes), None)
        return overlap * (D**self.n / self.z)

    def nll(self, inputs: np.ndarray, outcomes: np.ndarray, floor: float) -> float:
        p = self.probabilities(inputs, outcomes)
        return float(-np.mean(np.log(np.maximum(p, floor))))

    def cost(self, inputs: np.ndarray, outcomes: np.ndarray, kappa: float, floor: float) -> float:
        return self.nll(inputs, outcomes, floor) + kappa * self.gamma

    def cost_and_gradient(
        self, inputs: np.ndarray, outcomes: np.ndarray, kappa: float, floor: float
    ) -> tuple[float, list[np.ndarray]]:
        m = len(inputs)
        if m == 0:
            raise ValueError("batch must be nonempty")
        codes = self._codes(inputs, outcomes)
        scale = D**self.n / self.z

        def weights(overlap: np.ndarray) -> np.ndarray:
            p = overlap * scale
            return np.where(p > floor, -scale / np.maximum(p, floor) / m, 0.0)

        overlap, g_codes = self._map_chunks(codes, weights)
        p = overlap * scale
        cost_val = float(-np.mean(np.log(np.maximum(p, floor)))) + kappa * self.gamma

        grads = []
        site_cots = []
        for j in range(self.n):
            nodes, node_labels, plan = self._site_runs[j]
            cots = backward_plan_arrays(nodes, node_labels, plan, g_codes[j], 4)
            site_cots.append(cots)
            grads.append(_conj_wirtinger(cots[0], cots[1]))

        # trace term: d(-mean log P)/dZ = live_fraction / Z, plus the penalty
        live_frac = float(np.count_nonzero(p > floor)) / m
        dz = live_frac / self.z
        dt2 = 0.0
        if kappa > 0.0 and self.gamma >= GAMMA_TOL:
            dgamma_dr = 1.0 / (2.0 * self.gamma * D**self.n)
            dt2 = kappa * dgamma_dr
            dz += kappa * dgamma_dr * (-2.0)
        if dz != 0.0:
            zc = backward_plan_arrays(
                self._z_nodes, self._z_labels, self._z_plan,
                np.asarray(1.0, dtype=np.complex128), 2 * self.n,
            )
            for j in range(self.n):
                grads[j] = grads[j] + dz * _conj_wirtinger(zc[2 * j], zc[2 * j + 1])
        if dt2 != 0.0:
            tc = backward_plan_arrays(
                self._t2_nodes, self._t2_labels, self._t2_plan,
                np.asarray(1.0, dtype=np.complex128), 4 * self.n,
            )
            for j in range(self.n):
                plain = tc[4 * j] + tc[4 * j + 3]
                conj = tc[4 * j + 1] + tc[4 * j + 2]
                grads[j] = grads[j] + dt2 * _conj_wirtinger(plain, conj)
        return cost_val, grads


# ---------------------------------------------------------------------------
# Spec-level operations
# ---------------------------------------------------------------------------

def cost(
    lpdo: Lpdo,
    batch,
    states: np.ndarray,
    effects: np.ndarray,
    kappa: float = 0.1,
    prob_floor: float = 1e-12,
) -> float:
    inputs, outcomes = _as_record_arrays(batch)
    ev = BatchEvaluator(lpdo, states, effects)
    return ev.cost(inputs, outcomes, kappa, prob_floor)


def gradient(
    lpdo: Lpdo,
    batch,
    states: np.ndarray,
    effects: np.ndarray,
    kappa: float = 0.1,
    prob_floor: float = 1e-12,
) -> list[np.ndarray]:
    inputs, outcomes = _as_record_arrays(batch)
    ev = BatchEvaluator(lpdo, states, effects)
    return ev.cost_and_gradient(inputs, outcomes, kappa, prob_floor)[1]


def cost_and_gradient(
    lpdo: Lpdo,
    batch,
    states: np.ndarray,
    effects: np.ndarray,
    kappa: float = 0.1,
    prob_floor: float = 1e-12,
) -> tuple[float, list[np.ndarray]]:
    inputs, outcomes = _as_record_arrays(batch)
    ev = BatchEvaluator(lpdo, states, effects)
    return ev.cost_and_gradient(inputs, outcomes, kappa, prob_floor)


@dataclass(frozen=True)
class AdamState:
    params: tuple[np.ndarray, ...]
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    t: int

    @staticmethod
    def init(params: Sequence[np.ndarray]) -> "AdamState":
        params = tuple(np.array(p, dtype=np.complex128) for p in params)
        return AdamState(
            params,
            tuple(np.zeros_like(p) for p in params),
            tuple(np.zeros(p.shape, dtype=np.float64) for p in params),
            0,
        )


def adam_step(state: AdamState, grads: Sequence[np.ndarray], config: TrainConfig) -> AdamState:
    """One Adam update on complex parameters.

    First-moment averaging acts on the complex gradient itself; the second
    moment accumulates |g|^2 per entry, so the step treats real and imaginary
    parts jointly and is equivariant under a global phase of the gradient.
    """
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_p, new_m, new_v = [], [], []
    for p, m, v, g in zip(state.params, state.m, state.v, grads):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * np.abs(g) ** 2
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps))
        new_m.append(m)
        new_v.append(v)
    return AdamState(tuple(new_p), tuple(new_m), tuple(new_v), t)


def _rng(*words: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(words)))


def train(
    lpdo: Lpdo,
    dataset: Dataset,
    config: TrainConfig,
    reference_unitary: np.ndarray | None = None,
    states: np.ndarray | None = None,
    effects: np.ndarray | None = None,
    log_every: int = 0,
) -> tuple[Lpdo, TrainHistory]:
    """Mini-batch gradient descent with validation-based model selection.

    A validation split of ``validation_fraction`` is drawn once from the tail
    of a seeded shuffle.  Every epoch reshuffles the training records with a
    seed derived from (seed, epoch), steps Adam over mini-batches (one full
    batch when the training set is smaller than ``batch_size`` or the batch
    size is unset), then records training and validation loss - and fidelity
    against ``reference_unitary`` when given.  The returned model is the
    checkpoint with the lowest validation loss across all epochs.

    ``states``/``effects`` default to the dataset registries; passing
    corrected registries (e.g. from a SPAM override) changes only the
    evaluation, never the recorded indices.
    """
    if states is None:
        states = dataset.states
    if effects is None:
        effects = dataset.effects
    m_total = len(dataset)
    if m_total < 2:
        raise ValueError("dataset too small to split")
    n_val = int(round(config.validation_fraction * m_total))
    n_val = min(max(n_val, 0), m_total - 1)
    perm = _rng(config.seed, _TAG_SPLIT).permutation(m_total)
    train_idx = perm[: m_total - n_val]
    val_idx = perm[m_total - n_val :]
    tr_in, tr_out = dataset.inputs[train_idx], dataset.outcomes[train_idx]
    va_in, va_out = dataset.inputs[val_idx], dataset.outcomes[val_idx]

    batch = config.batch_size if 0 < config.batch_size <= len(tr_in) else len(tr_in)
    current = tuple(s.copy() for s in lpdo.sites)
    adam = AdamState.init(current)

    train_losses: list[float] = []
    val_losses: list[float] = []
    fidelities: list[float] | None = None if reference_unitary is None else []
    best_val = np.inf
    best_sites = current
    best_epoch = 0

    for epoch in range(config.epochs):
        order = _rng(config.seed, _TAG_EPOCH, epoch).permutation(len(tr_in))
        for lo in range(0, len(order) - batch + 1, batch):
            sel = order[lo : lo + batch]
            model = Lpdo(lpdo.topology, adam.params)
            ev = BatchEvaluator(model, states, effects, config.chunk, config.workers)
            _, grads = ev.cost_and_gradient(
                tr_in[sel], tr_out[sel], config.kappa, config.prob_floor
            )
            adam = adam_step(adam, grads, config)

        model = Lpdo(lpdo.topology, adam.params)
        ev = BatchEvaluator(model, states, effects, config.chunk, config.workers)
        t_loss = ev.cost(tr_in, tr_out, config.kappa, config.prob_floor)
        v_loss = (
            ev.cost(va_in, va_out, config.kappa, config.prob_floor)
            if len(va_in)
            else t_loss
        )
        train_losses.append(t_loss)
        val_losses.append(v_loss)
        if fidelities is not None:
            fidelities.append(fidelity_to_unitary(model, reference_unitary))
        if v_loss < best_val:
            best_val = v_loss
            best_sites = tuple(p.copy() for p in adam.params)
            best_epoch = epoch
        if log_every and (epoch + 1) % log_every == 0:
            fid = f" fid={fidelities[-1]:.4f}" if fidelities else ""
            print(
                f"epoch {epoch + 1}/{config.epochs} train={t_loss:.5f} "
                f"val={v_loss:.5f}{fid}"
            )

    history = TrainHistory(
        tuple(train_losses),
        tuple(val_losses),
        None if fidelities is None else tuple(fidelities),
        best_epoch,
    )
    return Lpdo(lpdo.topology, best_sites), history


def data_size_sweep(
    lpdo: Lpdo,
    dataset: Dataset,
    sizes: Sequence[int],
    config: TrainConfig,
    reference_unitary: np.ndarray,
    states: np.ndarray | None = None,
    effects: np.ndarray | None = None,
) -> list[tuple[int, float]]:
    """Best-epoch infidelity as a function of training-set size.

    Each size trains independently on a prefix of one fixed seeded shuffle of
    the dataset, so larger runs extend smaller ones.  Rows are CSV-ready
    (M, infidelity-at-lowest-validation-loss).
    """
    m_total = len(dataset)
    for size in sizes:
        if size > m_total:
            raise ValueError(f"requested size {size} exceeds dataset size {m_total}")
    shuffle = _rng(config.seed, _TAG_SWEEP).permutation(m_total)
    rows: list[tuple[int, float]] = []
    for size in sizes:
        sub = dataset.subset(shuffle[:size])
        best, history = train(
            lpdo, sub, config, reference_unitary, states=states, effects=effects
        )
        assert history.fidelity is not None
        rows.append((int(size), 1.0 - history.fidelity[history.best_epoch]))
    return rows
