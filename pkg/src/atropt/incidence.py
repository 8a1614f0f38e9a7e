"""Structural analysis of square equation systems.

Builds the bipartite equation/variable incidence graph, finds a perfect
matching by augmenting paths, and permutes the system to block-lower
triangular form using the strongly connected components of the matching
orientation. Blocks come out in an order in which they can be solved one
at a time.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

__all__ = [
    "IncidenceGraph",
    "BltPartition",
    "StructurallySingular",
    "maximum_matching",
    "block_triangularize",
    "incidence_report",
]


class StructurallySingular(Exception):
    """No perfect equation/variable matching exists (modeling bug)."""

    def __init__(self, n, matching_size):
        super().__init__(
            f"square system of size {n} admits a maximum matching of only {matching_size}"
        )
        self.n = n
        self.matching_size = matching_size


@dataclass(frozen=True)
class IncidenceGraph:
    """Bipartite adjacency: equation index -> sorted variable indices."""

    n: int
    adjacency: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.adjacency) != self.n:
            raise ValueError("adjacency rows must match the equation count")
        for row in self.adjacency:
            for j in row:
                if not 0 <= j < self.n:
                    raise ValueError(f"variable index {j} out of range for n={self.n}")

    @staticmethod
    def from_rows(rows: Sequence[Sequence[int]]) -> "IncidenceGraph":
        return IncidenceGraph(len(rows), tuple(tuple(sorted(set(r))) for r in rows))

    def nonzeros(self):
        for i, row in enumerate(self.adjacency):
            for j in row:
                yield i, j


@dataclass
class BltPartition:
    """Ordered square diagonal blocks of a permuted incidence matrix.

    ``row_perm[k]`` / ``col_perm[k]`` give the original equation / variable
    index placed at permuted position k. Solving blocks in order only ever
    uses variables from the same or earlier blocks.
    """

    blocks: List[Tuple[Tuple[int, ...], Tuple[int, ...]]]
    row_perm: List[int]
    col_perm: List[int]
    graph: IncidenceGraph = field(repr=False)

    @property
    def block_sizes(self):
        return [len(eqs) for eqs, _ in self.blocks]


def maximum_matching(g: IncidenceGraph):
    """Perfect matching equation -> variable, by augmenting-path search.

    Deterministic: equations are processed in ascending index order and
    neighbors in ascending variable order. Raises StructurallySingular when
    no perfect matching exists, reporting the maximum matching size.
    """
    n = g.n
    match_of_var = [-1] * n
    match_of_eq = [-1] * n

    def augment(eq, visited):
        for v in g.adjacency[eq]:
            if visited[v]:
                continue
            visited[v] = True
            if match_of_var[v] < 0 or augment(match_of_var[v], visited):
                match_of_var[v] = eq
                match_of_eq[eq] = v
                return True
        return False

    size = 0
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 4 * n + 100))
    try:
        for eq in range(n):
            if augment(eq, [False] * n):
                size += 1
    finally:
        sys.setrecursionlimit(old_limit)
    if size != n:
        raise StructurallySingular(n, size)
    return match_of_eq


def block_triangularize(g: IncidenceGraph) -> BltPartition:
    """Strongly connected components of the matching orientation, in
    dependency order, as a block-lower-triangular partition."""
    match_of_eq = maximum_matching(g)
    n = g.n
    owner_of_var = [-1] * n
    for eq, v in enumerate(match_of_eq):
        owner_of_var[v] = eq

    # eq -> equations owning the other variables it references
    # (an equation depends on the owner of every variable it touches).
    dependencies = []
    for eq in range(n):
        deps = sorted({owner_of_var[v] for v in g.adjacency[eq]} - {eq})
        dependencies.append(deps)

    sccs = _tarjan_sccs(n, dependencies)

    blocks = []
    row_perm: List[int] = []
    col_perm: List[int] = []
    for comp in sccs:
        eqs = tuple(sorted(comp))
        vars_ = tuple(match_of_eq[e] for e in eqs)
        blocks.append((eqs, vars_))
        row_perm.extend(eqs)
        col_perm.extend(vars_)
    return BltPartition(blocks=blocks, row_perm=row_perm, col_perm=col_perm, graph=g)


def _tarjan_sccs(n, successors):
    """Iterative Tarjan. Components are emitted only after everything they
    depend on, so the emission order is a valid solve order."""
    index_of = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: List[int] = []
    sccs: List[List[int]] = []
    counter = 0

    for root in range(n):
        if index_of[root] >= 0:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index_of[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            succ = successors[v]
            while pi < len(succ):
                w = succ[pi]
                pi += 1
                if index_of[w] < 0:
                    work[-1] = (v, pi)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index_of[w])
            if advanced:
                continue
            work.pop()
            if low[v] == index_of[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(comp)
            if work:
                u, _ = work[-1]
                low[u] = min(low[u], low[v])
    return sccs


@dataclass(frozen=True)
class IncidenceReport:
    """Permuted nonzero coordinates plus cumulative block boundaries."""

    n: int
    nonzeros: Tuple[Tuple[int, int], ...]
    boundaries: Tuple[int, ...]


def incidence_report(p: BltPartition) -> IncidenceReport:
    """Matrix-plot data for a partition: (row, col) nonzeros in permuted
    coordinates and the cumulative block boundary offsets."""
    g = p.graph
    row_pos = {eq: k for k, eq in enumerate(p.row_perm)}
    col_pos = {v: k for k, v in enumerate(p.col_perm)}
    nz = tuple(
        sorted((row_pos[i], col_pos[j]) for i, j in g.nonzeros())
    )
    bounds = []
    acc = 0
    for size in p.block_sizes:
        acc += size
        bounds.append(acc)
    return IncidenceReport(n=g.n, nonzeros=nz, boundaries=tuple(bounds))
