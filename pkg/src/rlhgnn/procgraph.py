"""Heterogeneous process graphs built from prefixes.

Vertices are event positions 1..k. Three typed edge lists are kept apart:
forward (i -> i+1), backward (i+1 -> i) and repeat edges linking recurring
activities to the successors of their other occurrences. Four structures
combine them progressively:

    G1 = forward, G2 = forward + backward, G3 = forward + repeat, G4 = all three
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .exceptions import ParameterError


class EdgeType(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    REPEAT = "repeat"


STRUCTURES = ("G1", "G2", "G3", "G4")

STRUCTURE_EDGE_TYPES = {
    "G1": (EdgeType.FORWARD,),
    "G2": (EdgeType.FORWARD, EdgeType.BACKWARD),
    "G3": (EdgeType.FORWARD, EdgeType.REPEAT),
    "G4": (EdgeType.FORWARD, EdgeType.BACKWARD, EdgeType.REPEAT),
}

Edge = tuple[int, int]


def structure_id(structure) -> str:
    if structure not in STRUCTURES:
        raise ParameterError(f"unknown graph structure {structure!r}; expected one of {STRUCTURES}")
    return structure


@dataclass(frozen=True)
class ProcessGraph:
    num_nodes: int
    edges: dict
    structure_id: str

    @property
    def current_node(self) -> int:
        return self.num_nodes

    @property
    def edge_types(self) -> tuple[EdgeType, ...]:
        return STRUCTURE_EDGE_TYPES[self.structure_id]

    def edge_list(self, etype: EdgeType) -> list[Edge]:
        return list(self.edges.get(EdgeType(etype), ()))

    def edge_array(self, etype: EdgeType) -> np.ndarray:
        """0-based ``[E, 2]`` (src, dst) array."""
        lst = self.edges.get(EdgeType(etype), ())
        if not lst:
            return np.zeros((0, 2), dtype=np.int64)
        return np.asarray(lst, dtype=np.int64) - 1

    def to_text(self) -> str:
        """One ``type src dst`` line per edge."""
        lines = []
        for etype in EdgeType:
            for s, d in self.edges.get(etype, ()):
                lines.append(f"{etype.value} {s} {d}")
        return "\n".join(lines) + ("\n" if lines else "")


def build_forward_edges(k: int) -> list[Edge]:
    if k < 1:
        raise ParameterError("prefix length must be >= 1")
    return [(i, i + 1) for i in range(1, k)]


def build_backward_edges(k: int) -> list[Edge]:
    if k < 1:
        raise ParameterError("prefix length must be >= 1")
    return [(i + 1, i) for i in range(1, k)]


def connect_repeated_activities(activities: Sequence, k: int | None = None) -> list[Edge]:
    """Repeat edges for every pair of occurrences p_i < p_j of one activity.

    Adds (p_i, p_j + 1) and (p_j, p_i + 1) whenever the successor position
    exists. Duplicates are dropped; self-loops from adjacent repeats are kept.
    """
    if k is None:
        k = len(activities)
    if k < 1:
        raise ParameterError("prefix length must be >= 1")
    positions: dict = {}
    for pos, act in enumerate(activities[:k], start=1):
        positions.setdefault(act, []).append(pos)
    edges = set()
    for occ in positions.values():
        for a in range(len(occ)):
            for b in range(a + 1, len(occ)):
                pi, pj = occ[a], occ[b]
                if pj + 1 <= k:
                    edges.add((pi, pj + 1))
                if pi + 1 <= k:
                    edges.add((pj, pi + 1))
    return sorted(edges)


def _base_edges(activities: Sequence) -> dict:
    k = len(activities)
    return {
        EdgeType.FORWARD: tuple(build_forward_edges(k)),
        EdgeType.BACKWARD: tuple(build_backward_edges(k)),
        EdgeType.REPEAT: tuple(connect_repeated_activities(activities, k)),
    }


def _view(k: int, base: dict, sid: str) -> ProcessGraph:
    keep = STRUCTURE_EDGE_TYPES[sid]
    return ProcessGraph(k, {t: base[t] for t in keep}, sid)


def _activities_of(prefix) -> list:
    if hasattr(prefix, "activity_ids"):
        return [int(a) for a in prefix.activity_ids]
    if hasattr(prefix, "activities"):
        return list(prefix.activities)
    return list(prefix)


def assemble_structure(prefix, structure: str) -> ProcessGraph:
    """Build one structure for a prefix (a Trace, EncodedTrace, or activity list)."""
    sid = structure_id(structure)
    acts = _activities_of(prefix)
    if len(acts) < 1:
        raise ParameterError("prefix must contain at least one event")
    return _view(len(acts), _base_edges(acts), sid)


def build_all_structures(prefix) -> dict[str, ProcessGraph]:
    acts = _activities_of(prefix)
    if len(acts) < 1:
        raise ParameterError("prefix must contain at least one event")
    base = _base_edges(acts)
    return {sid: _view(len(acts), base, sid) for sid in STRUCTURES}
