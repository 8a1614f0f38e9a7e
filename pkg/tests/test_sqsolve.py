import math

import numpy as np
import pytest

from atropt import expr as ex
from atropt import sqsolve as sq
from atropt.model import Constraint, SquareSubsystem


def con(name, residual):
    return Constraint(name, residual)


def test_quadratic_block():
    x = ex.var("x")
    values, rep = sq.solve_block([con("q", x * x - 4.0)], ["x"], {"x": 3.0})
    assert rep.status == sq.CONVERGED
    assert values["x"] == pytest.approx(2.0, abs=1e-9)
    assert rep.residual_inf <= 1e-10


def test_log_block_closed_form():
    # ln(x) + 1 = 0  ->  x = exp(-1)
    x = ex.var("x")
    values, rep = sq.solve_block(
        [con("lg", ex.log(x) + 1.0)], ["x"], {"x": 1.0}, lower_bounds={"x": 0.0}
    )
    assert rep.status == sq.CONVERGED
    assert values["x"] == pytest.approx(math.exp(-1.0), rel=1e-9)


def test_domain_guard_keeps_x_positive():
    # Newton from x=3 on ln(x)=0 overshoots to negative without a guard;
    # the clip keeps the iterate valid and converges to 1.
    x = ex.var("x")
    values, rep = sq.solve_block(
        [con("lg", ex.log(x))], ["x"], {"x": 3.0}, lower_bounds={"x": 0.0}
    )
    assert rep.status == sq.CONVERGED
    assert values["x"] == pytest.approx(1.0, rel=1e-8)


def test_no_clip_reports_eval_error_never_nan():
    x = ex.var("x")
    opts = sq.BlockSolveOptions(clip=False)
    values, rep = sq.solve_block(
        [con("lg", ex.log(x))], ["x"], {"x": 3.0}, opts, lower_bounds={"x": 0.0}
    )
    if rep.status == sq.CONVERGED:
        assert values["x"] == pytest.approx(1.0, rel=1e-8)
    else:
        assert rep.status == sq.EVAL_ERROR
        assert rep.error is not None
        assert math.isfinite(values["x"])


def test_two_by_two_coupled():
    x, y = ex.var("x"), ex.var("y")
    eqs = [con("a", x * x + y * y - 4.0), con("b", x - y)]
    values, rep = sq.solve_block(eqs, ["x", "y"], {"x": 1.0, "y": 0.5})
    assert rep.status == sq.CONVERGED
    assert values["x"] == pytest.approx(math.sqrt(2.0), rel=1e-8)
    assert values["y"] == pytest.approx(math.sqrt(2.0), rel=1e-8)


def lower_triangular_system():
    x, y, z = ex.var("x"), ex.var("y"), ex.var("z")
    eqs = [
        con("e0", 2.0 * x - 4.0),
        con("e1", x + 3.0 * y - 11.0),
        con("e2", x + y + 2.0 * z - 13.0),
    ]
    return SquareSubsystem(equations=eqs, outputs=["x", "y", "z"], inputs=[])


def test_blt_lower_triangular_linear():
    sub = lower_triangular_system()
    guess = {"x": 0.0, "y": 0.0, "z": 0.0}
    values, rep = sq.solve_blt(sub, {}, guess)
    assert rep.status == sq.CONVERGED
    assert values == pytest.approx({"x": 2.0, "y": 3.0, "z": 4.0})
    assert len(rep.blocks) == 3


def test_blt_matches_monolithic_newton():
    # Coupled nonlinear system solved both monolithically and via BLT.
    a, b, c = ex.var("a"), ex.var("b"), ex.var("c")
    u = ex.var("u")
    eqs = [
        con("f0", a * a + b - 3.0 - u),
        con("f1", a + b * b - 5.0),
        con("f2", c - a * b),
    ]
    sub = SquareSubsystem(equations=eqs, outputs=["a", "b", "c"], inputs=["u"])
    inputs = {"u": 0.5}
    guess = {"a": 1.0, "b": 1.5, "c": 1.0}
    blt_values, blt_rep = sq.solve_blt(sub, inputs, guess)
    mono_values, mono_rep = sq.solve_block(eqs, ["a", "b", "c"], {**inputs, **guess})
    assert blt_rep.status == sq.CONVERGED
    assert mono_rep.status == sq.CONVERGED
    for k in ("a", "b", "c"):
        assert blt_values[k] == pytest.approx(mono_values[k], abs=1e-8)


def test_blt_failure_names_block():
    x, y = ex.var("x"), ex.var("y")
    eqs = [
        con("ok", x - 2.0),
        con("bad", ex.log(y - 10.0) + x),  # no solution reachable from y0 with y<=10
    ]
    sub = SquareSubsystem(equations=eqs, outputs=["x", "y"], inputs=[])
    opts = sq.BlockSolveOptions(max_iter=12, clip=False)
    values, rep = sq.solve_blt(sub, {}, {"x": 0.0, "y": 5.0}, opts)
    assert rep.status != sq.CONVERGED
    assert rep.failed_block == "bad"


def test_warm_start_converges_immediately():
    x = ex.var("x")
    eqs = [con("q", x * x - 4.0)]
    values, rep = sq.solve_block(eqs, ["x"], {"x": 3.0})
    values2, rep2 = sq.solve_block(eqs, ["x"], values)
    assert rep2.status == sq.CONVERGED
    assert rep2.iterations <= 2


def test_outputs_never_nan():
    x = ex.var("x")
    opts = sq.BlockSolveOptions(max_iter=5)
    values, rep = sq.solve_block([con("hard", ex.exp(x) + 1.0)], ["x"], {"x": 0.0}, opts)
    assert rep.status != sq.CONVERGED
    assert math.isfinite(values["x"])


def test_singular_jacobian_status():
    x, y = ex.var("x"), ex.var("y")
    # rows are permanently dependent and inconsistent
    eqs = [con("s0", x + y - 1.0), con("s1", 2.0 * x + 2.0 * y - 3.0)]
    opts = sq.BlockSolveOptions(max_iter=10)
    values, rep = sq.solve_block(eqs, ["x", "y"], {"x": 0.0, "y": 0.0}, opts)
    assert rep.status in (sq.SINGULAR, sq.ITER_LIMIT)
