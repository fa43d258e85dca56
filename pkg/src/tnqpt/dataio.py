"""Measurement registries, shot datasets, and their file formats.

A shot record is a pair of index tuples: which state was prepared on each
qubit and which POVM effect fired on each qubit.  Datasets are line-oriented
text files whose JSON header embeds the full per-qubit state and effect
registries (complex entries as [re, im] pairs), so a file is self-describing
and SPAM-corrected registries travel with the data they produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

__all__ = [
    "ShotRecord",
    "Dataset",
    "SpamOverride",
    "builtin_pauli6",
    "qpt4_states",
    "broadcast_registry",
    "save_dataset",
    "load_dataset",
    "load_spam_overrides",
    "save_spam_overrides",
]

_MAGIC = "#tnqpt-dataset v1"


class ShotRecord(NamedTuple):
    inputs: tuple[int, ...]
    outcomes: tuple[int, ...]


def builtin_pauli6() -> tuple[np.ndarray, np.ndarray]:
    """The informationally complete single-qubit defaults.

    Six input states |X+-><X+-|, |Y+-><Y+-|, |Z+-><Z+-| and the same set
    scaled by 1/3 as the POVM, ordered (X+, X-, Y+, Y-, Z+, Z-).  The effects
    sum to the identity exactly.
    """
    plus = np.array([1, 1], dtype=np.complex128) / np.sqrt(2)
    minus = np.array([1, -1], dtype=np.complex128) / np.sqrt(2)
    plus_i = np.array([1, 1j], dtype=np.complex128) / np.sqrt(2)
    minus_i = np.array([1, -1j], dtype=np.complex128) / np.sqrt(2)
    zero = np.array([1, 0], dtype=np.complex128)
    one = np.array([0, 1], dtype=np.complex128)
    states = np.stack([np.outer(v, v.conj()) for v in (plus, minus, plus_i, minus_i, zero, one)])
    return states, states / 3.0


def qpt4_states() -> np.ndarray:
    """The four-state input set {Z+, Z-, X+, Y+} of the traditional protocol."""
    zero = np.array([1, 0], dtype=np.complex128)
    one = np.array([0, 1], dtype=np.complex128)
    plus = np.array([1, 1], dtype=np.complex128) / np.sqrt(2)
    plus_i = np.array([1, 1j], dtype=np.complex128) / np.sqrt(2)
    return np.stack([np.outer(v, v.conj()) for v in (zero, one, plus, plus_i)])


def broadcast_registry(single: np.ndarray, n_qubits: int) -> np.ndarray:
    """Tile a (K, d, d) single-qubit registry to per-qubit shape (n, K, d, d)."""
    single = np.asarray(single, dtype=np.complex128)
    return np.broadcast_to(single, (n_qubits,) + single.shape).copy()


def _validate_states(states: np.ndarray, tol: float) -> None:
    for q in range(states.shape[0]):
        for k in range(states.shape[1]):
            m = states[q, k]
            if abs(np.trace(m).real - 1.0) > tol or abs(np.trace(m).imag) > tol:
                raise ValueError(f"state {k} on qubit {q} does not have unit trace")
            if np.abs(m - m.conj().T).max() > tol:
                raise ValueError(f"state {k} on qubit {q} is not Hermitian")
            if np.linalg.eigvalsh(m)[0] < -tol:
                raise ValueError(f"state {k} on qubit {q} is not positive semidefinite")


def _validate_povm(effects: np.ndarray, tol: float) -> None:
    d = effects.shape[-1]
    for q in range(effects.shape[0]):
        for k in range(effects.shape[1]):
            m = effects[q, k]
            if np.abs(m - m.conj().T).max() > tol:
                raise ValueError(f"effect {k} on qubit {q} is not Hermitian")
            if np.linalg.eigvalsh(m)[0] < -tol:
                raise ValueError(
                    f"effect {k} on qubit {q} has a negative eigenvalue beyond {tol}"
                )
        total = effects[q].sum(axis=0)
        if np.abs(total - np.eye(d)).max() > tol:
            raise ValueError(f"effects on qubit {q} do not sum to the identity")


@dataclass(frozen=True)
class Dataset:
    """Shot records plus the per-qubit registries their indices refer to."""

    states: np.ndarray  # (n, K_p, d, d)
    effects: np.ndarray  # (n, K_m, d, d)
    inputs: np.ndarray  # (M, n) integer
    outcomes: np.ndarray  # (M, n) integer

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.complex128)
        effects = np.asarray(self.effects, dtype=np.complex128)
        inputs = np.asarray(self.inputs, dtype=np.int64)
        outcomes = np.asarray(self.outcomes, dtype=np.int64)
        for name, val in (
            ("states", states), ("effects", effects),
            ("inputs", inputs), ("outcomes", outcomes),
        ):
            object.__setattr__(self, name, val)
        n = states.shape[0]
        if effects.shape[0] != n:
            raise ValueError("states and effects disagree on qubit count")
        if inputs.shape != outcomes.shape or (len(inputs) and inputs.shape[1] != n):
            raise ValueError("record arrays must be (M, n_qubits)")
        self.validate_indices()

    def validate_indices(self) -> None:
        kp = self.states.shape[1]
        km = self.effects.shape[1]
        for arr, bound, what in ((self.inputs, kp, "input"), (self.outcomes, km, "outcome")):
            if len(arr) == 0:
                continue
            bad = np.argwhere((arr < 0) | (arr >= bound))
            if len(bad):
                r, q = bad[0]
                raise ValueError(
                    f"record {r}: {what} index {arr[r, q]} on qubit {q} "
                    f"outside registry of size {bound}"
                )

    @property
    def n_qubits(self) -> int:
        return self.states.shape[0]

    def __len__(self) -> int:
        return len(self.inputs)

    def record(self, i: int) -> ShotRecord:
        return ShotRecord(tuple(int(x) for x in self.inputs[i]),
                          tuple(int(x) for x in self.outcomes[i]))

    def __iter__(self) -> Iterator[ShotRecord]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.states, self.effects, self.inputs[idx], self.outcomes[idx])

    def with_registries(self, states: np.ndarray, effects: np.ndarray) -> "Dataset":
        return Dataset(states, effects, self.inputs, self.outcomes)


def _complex_to_pairs(arr: np.ndarray) -> list:
    out = np.stack([arr.real, arr.imag], axis=-1)
    return out.tolist()


def _pairs_to_complex(obj, shape_hint: str) -> np.ndarray:
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim < 1 or arr.shape[-1] != 2:
        raise ValueError(f"{shape_hint}: complex entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    header = {
        "n_qubits": dataset.n_qubits,
        "n_states": int(dataset.states.shape[1]),
        "n_outcomes": int(dataset.effects.shape[1]),
        "states": _complex_to_pairs(dataset.states),
        "effects": _complex_to_pairs(dataset.effects),
    }
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(json.dumps(header) + "\n")
        for a, b in zip(dataset.inputs, dataset.outcomes):
            fh.write(" ".join(str(int(x)) for x in a) + " "
                     + " ".join(str(int(x)) for x in b) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    with open(path) as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic line)")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line 2: malformed header: {exc}") from exc
        n = int(header["n_qubits"])
        states = _pairs_to_complex(header["states"], "states")
        effects = _pairs_to_complex(header["effects"], "effects")
        inputs, outcomes = [], []
        for lineno, line in enumerate(fh, start=3):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 * n:
                raise ValueError(
                    f"{path}: line {lineno}: expected {2 * n} indices, got {len(parts)}"
                )
            try:
                vals = [int(p) for p in parts]
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: non-integer index") from exc
            inputs.append(vals[:n])
            outcomes.append(vals[n:])
    inputs_arr = np.asarray(inputs, dtype=np.int64).reshape(-1, n)
    outcomes_arr = np.asarray(outcomes, dtype=np.int64).reshape(-1, n)
    _validate_states(states, 1e-8)
    return Dataset(states, effects, inputs_arr, outcomes_arr)


@dataclass(frozen=True)
class SpamOverride:
    """Per-qubit replacement registries, e.g. gate-set-tomography estimates.

    Qubits absent from the file keep the base (ideal) registries; the
    ``overridden`` set records which were replaced.
    """

    states: np.ndarray
    effects: np.ndarray
    overridden: frozenset[int]


def load_spam_overrides(
    path: str | Path,
    n_qubits: int,
    base_states: np.ndarray | None = None,
    base_effects: np.ndarray | None = None,
) -> SpamOverride:
    """Read per-qubit corrected registries, validating with relaxed tolerances.

    Estimated registries are noisy, so effects may miss the identity sum by up
    to 1e-6 and carry eigenvalues down to -1e-6; states must keep unit trace
    to 1e-8.  Anything worse is rejected.
    """
    if base_states is None or base_effects is None:
        s1, e1 = builtin_pauli6()
        base_states = broadcast_registry(s1, n_qubits) if base_states is None else base_states
        base_effects = broadcast_registry(e1, n_qubits) if base_effects is None else base_effects
    states = np.array(base_states, dtype=np.complex128)
    effects = np.array(base_effects, dtype=np.complex128)
    with open(path) as fh:
        doc = json.load(fh)
    qubits = doc.get("qubits", {})
    touched = set()
    for key, entry in qubits.items():
        q = int(key)
        if not 0 <= q < n_qubits:
            raise ValueError(f"override for qubit {q} outside range [0, {n_qubits})")
        if "states" in entry:
            states[q] = _pairs_to_complex(entry["states"], f"qubit {q} states")
        if "effects" in entry:
            effects[q] = _pairs_to_complex(entry["effects"], f"qubit {q} effects")
        touched.add(q)
    _validate_states(states, 1e-8)
    _validate_povm(effects, 1e-6)
    return SpamOverride(states, effects, frozenset(touched))


def save_spam_overrides(
    path: str | Path,
    states: dict[int, np.ndarray] | None = None,
    effects: dict[int, np.ndarray] | None = None,
) -> None:
    doc: dict = {"qubits": {}}
    for q in sorted(set(states or {}) | set(effects or {})):
        entry = {}
        if states and q in states:
            entry["states"] = _complex_to_pairs(np.asarray(states[q]))
        if effects and q in effects:
            entry["effects"] = _complex_to_pairs(np.asarray(effects[q]))
        doc["qubits"][str(q)] = entry
    Path(path).write_text(json.dumps(doc) + "\n")
