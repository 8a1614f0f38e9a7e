import numpy as np
import pytest

from atropt import incidence as inc


def planted_pattern(rng, n, extra_density=0.15):
    """Random square sparsity pattern with a planted perfect matching."""
    perm = rng.permutation(n)
    rows = [set() for _ in range(n)]
    for i in range(n):
        rows[i].add(int(perm[i]))
    for i in range(n):
        for j in range(n):
            if rng.random() < extra_density:
                rows[i].add(j)
    return inc.IncidenceGraph.from_rows([sorted(r) for r in rows])


def check_partition(g, p):
    n = g.n
    sizes = p.block_sizes
    assert sum(sizes) == n
    assert sorted(p.row_perm) == list(range(n))
    assert sorted(p.col_perm) == list(range(n))
    for eqs, vs in p.blocks:
        assert len(eqs) == len(vs)
    # no structural nonzero above the block diagonal
    block_of_row = {}
    block_of_col = {}
    for b, (eqs, vs) in enumerate(p.blocks):
        for e in eqs:
            block_of_row[e] = b
        for v in vs:
            block_of_col[v] = b
    for i, j in g.nonzeros():
        assert block_of_col[j] <= block_of_row[i], (i, j)


def test_identity_pattern_matches():
    g = inc.IncidenceGraph.from_rows([[0], [1], [2]])
    m = inc.maximum_matching(g)
    assert m == [0, 1, 2]


def test_duplicated_dependence_is_singular():
    g = inc.IncidenceGraph.from_rows([[0], [0]])
    with pytest.raises(inc.StructurallySingular) as err:
        inc.maximum_matching(g)
    assert err.value.matching_size == 1


def test_diagonal_gives_singleton_blocks():
    g = inc.IncidenceGraph.from_rows([[0], [1], [2], [3]])
    p = inc.block_triangularize(g)
    assert p.block_sizes == [1, 1, 1, 1]
    check_partition(g, p)


def test_dense_pattern_is_one_block():
    n = 5
    g = inc.IncidenceGraph.from_rows([list(range(n))] * n)
    p = inc.block_triangularize(g)
    assert p.block_sizes == [n]
    check_partition(g, p)


def test_two_block_chain():
    # eq0..1 couple vars 0..1; eq2..3 couple vars 2..3 and reference var 0
    g = inc.IncidenceGraph.from_rows([[0, 1], [0, 1], [0, 2, 3], [2, 3]])
    p = inc.block_triangularize(g)
    assert sorted(p.block_sizes) == [2, 2]
    check_partition(g, p)
    # the block containing eq 2 must come after the block owning var 0
    rep = inc.incidence_report(p)
    assert len(rep.boundaries) == 2


def test_lower_triangular_ordering_is_solvable_in_order():
    # strictly lower-triangular chain: eq_i depends on all earlier vars
    rows = [[j for j in range(i + 1)] for i in range(6)]
    g = inc.IncidenceGraph.from_rows(rows)
    p = inc.block_triangularize(g)
    assert p.block_sizes == [1] * 6
    check_partition(g, p)
    assert p.row_perm == list(range(6))


def test_determinism():
    rng = np.random.default_rng(7)
    g = planted_pattern(rng, 30)
    p1 = inc.block_triangularize(g)
    p2 = inc.block_triangularize(g)
    assert p1.blocks == p2.blocks
    assert p1.row_perm == p2.row_perm
    assert p1.col_perm == p2.col_perm


def test_random_planted_patterns():
    rng = np.random.default_rng(42)
    for trial in range(100):
        n = int(rng.integers(2, 25))
        g = planted_pattern(rng, n, extra_density=float(rng.uniform(0.0, 0.3)))
        p = inc.block_triangularize(g)
        check_partition(g, p)


def test_incidence_report_permuted_coordinates():
    g = inc.IncidenceGraph.from_rows([[0, 1], [0, 1], [1, 0]])
    with pytest.raises(inc.StructurallySingular):
        inc.maximum_matching(g)
    g2 = inc.IncidenceGraph.from_rows([[1], [0, 1], [0, 2]])
    p = inc.block_triangularize(g2)
    rep = inc.incidence_report(p)
    check_partition(g2, p)
    assert rep.n == 3
    boundaries = set(rep.boundaries)
    assert max(boundaries) == 3
    # every nonzero is at or below its block diagonal in permuted coords
    def block_of(pos):
        for b, bound in enumerate(rep.boundaries):
            if pos < bound:
                return b
        raise AssertionError
    for r, c in rep.nonzeros:
        assert block_of(c) <= block_of(r)
