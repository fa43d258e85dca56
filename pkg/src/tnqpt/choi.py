"""Dense Choi-matrix container and the dense manipulations used as oracles.

Index convention used throughout the package: the row of a Choi matrix is the
combined (input, output) computational-basis index ``sigma * d**n + tau`` with
qubit 0 most significant inside each group, so the matrix of the identity
channel on one qubit is ``sum_ij |ii><jj|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = ["DenseChoi"]

D = 2  # qubit physical dimension


@dataclass(frozen=True)
class DenseChoi:
    """A dense d^2n x d^2n Choi matrix, Hermitian by validation."""

    n_qubits: int
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.complex128)
        object.__setattr__(self, "matrix", m)
        dim = D ** (2 * self.n_qubits)
        if m.shape != (dim, dim):
            raise ValueError(f"expected {dim}x{dim} matrix, got {m.shape}")
        scale = max(np.abs(m).max(), 1.0)
        if np.abs(m - m.conj().T).max() > 1e-8 * scale:
            raise ValueError("Choi matrix is not Hermitian within tolerance")

    @property
    def dim(self) -> int:
        return D ** (2 * self.n_qubits)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def as_blocks(self) -> np.ndarray:
        """Reshape to [sigma, tau, sigma', tau'] blocks of size d^n each."""
        dn = D**self.n_qubits
        return self.matrix.reshape(dn, dn, dn, dn)

    def input_trace(self) -> np.ndarray:
        """Partial trace over the outputs: the d^n x d^n operator Tr_tau."""
        return np.einsum("stSt->sS", self.as_blocks())

    def element(self, sigma, tau, sigma_p, tau_p) -> complex:
        n = self.n_qubits

        def idx(bits) -> int:
            v = 0
            for b in bits:
                v = v * D + int(b)
            return v

        dn = D**n
        return complex(
            self.matrix[idx(sigma) * dn + idx(tau), idx(sigma_p) * dn + idx(tau_p)]
        )

    def probability(self, state: np.ndarray, effect: np.ndarray) -> float:
        """Tr[(state^T (x) effect) Choi] * d^n / Tr(Choi), dense reference path."""
        blocks = self.as_blocks()
        val = np.einsum("sS,Tt,stST->", state, effect, blocks)
        return float(val.real) * D**self.n_qubits / self.trace()

    def reduce(self, fixed: Mapping[int, np.ndarray], keep) -> "DenseChoi":
        """Contract fixed qubits' inputs against states and trace their outputs.

        ``fixed`` and ``keep`` must partition the qubit set.  This is the
        dense counterpart of the tensor-network subset reduction and serves
        as its oracle.
        """
        n = self.n_qubits
        keep = sorted(keep)
        if sorted(fixed) + keep != sorted(range(n)) or set(fixed) & set(keep):
            raise ValueError("fixed and keep must partition the qubit set")
        # axes: [s_0..s_{n-1}, t_0.., s'_0.., t'_0..]
        arr = self.matrix.reshape((D,) * (4 * n))
        remaining = list(range(n))
        for q in sorted(fixed, reverse=True):
            pos = remaining.index(q)
            m = len(remaining)
            ax_s = pos
            ax_t = m + pos
            ax_sp = 2 * m + pos
            ax_tp = 3 * m + pos
            arr = np.tensordot(arr, np.asarray(fixed[q]), axes=([ax_s, ax_sp], [0, 1]))
            # tensordot moved remaining axes forward; recompute tau positions
            ax_t_new = ax_t - 1
            ax_tp_new = ax_tp - 2
            arr = np.trace(arr, axis1=ax_t_new, axis2=ax_tp_new)
            remaining.remove(q)
        k = len(remaining)
        dk = D**k
        return DenseChoi(k, arr.reshape(dk * dk, dk * dk))
