"""Qubit connectivity graphs and their file format.

A topology is the undirected graph whose edges carry the bonds of the site
network.  Files are JSON: ``{"n_qubits": 7, "edges": [[0, 1], ...]}``.  Two
builtin names are accepted wherever a path is expected: ``ibeam7`` (the
7-qubit I-beam layout) and ``line<N>`` for a nearest-neighbour chain.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

__all__ = ["Topology", "load_topology", "save_topology"]


@dataclass(frozen=True)
class Topology:
    n_qubits: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if self.n_qubits < 1:
            raise ValueError("topology needs at least one qubit")
        norm: list[tuple[int, int]] = []
        seen = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop on qubit {a}")
            if not (0 <= a < self.n_qubits and 0 <= b < self.n_qubits):
                raise ValueError(f"edge ({a}, {b}) out of range for {self.n_qubits} qubits")
            e = (min(a, b), max(a, b))
            if e in seen:
                warnings.warn(f"duplicate edge {e} dropped", stacklevel=2)
                continue
            seen.add(e)
            norm.append(e)
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    def incident_edges(self, q: int) -> tuple[tuple[int, int], ...]:
        return tuple(e for e in self.edges if q in e)

    def neighbors(self, q: int) -> tuple[int, ...]:
        return tuple(a if b == q else b for a, b in self.incident_edges(q))

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in set(self.edges)

    @staticmethod
    def line(n: int) -> "Topology":
        return Topology(n, tuple((i, i + 1) for i in range(n - 1)))

    @staticmethod
    def ibeam7() -> "Topology":
        return Topology(7, ((0, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 6)))


def load_topology(path: str | Path) -> Topology:
    """Load a topology file, or resolve a builtin name (``ibeam7``, ``line<N>``)."""
    name = str(path)
    if name == "ibeam7":
        return Topology.ibeam7()
    m = re.fullmatch(r"line(\d+)", name)
    if m:
        return Topology.line(int(m.group(1)))
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return Topology(int(doc["n_qubits"]), tuple(tuple(e) for e in doc["edges"]))
    except KeyError as exc:
        raise ValueError(f"topology file {path} is missing field {exc}") from exc


def save_topology(topology: Topology, path: str | Path) -> None:
    doc = {"n_qubits": topology.n_qubits, "edges": [list(e) for e in topology.edges]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _edge(a: int, b: int) -> tuple[int, int]:
    return (min(a, b), max(a, b))


def validate_qubits(topology: Topology, qubits: Iterable[int]) -> None:
    for q in qubits:
        if not 0 <= q < topology.n_qubits:
            raise ValueError(f"qubit {q} out of range for {topology.n_qubits}-qubit topology")
