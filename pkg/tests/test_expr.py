import math

import pytest
from hypothesis import given, settings, strategies as st

from atropt import expr as ex


def fd_gradient(expression, point, h=1e-6):
    """Central finite differences, the independent derivative oracle."""
    out = {}
    for name in ex.incidence_vars(expression):
        hi = dict(point)
        lo = dict(point)
        hi[name] = point[name] + h
        lo[name] = point[name] - h
        out[name] = (ex.evaluate(expression, hi) - ex.evaluate(expression, lo)) / (2 * h)
    return out


def test_log_at_one():
    assert ex.evaluate(ex.log(ex.var("x")), {"x": 1.0}) == 0.0


def test_log_domain_boundary_is_error_not_nan():
    with pytest.raises(ex.EvalError) as err:
        ex.evaluate(ex.log(ex.var("x")), {"x": 0.0})
    assert err.value.kind == ex.DOMAIN_VIOLATION
    assert "x" in err.value.message


def test_scaled_reference_flow():
    # tiny printed-coefficient shape: 0.13e-22 * F_ref at 700
    e = ex.const(0.13e-22) * ex.var("F_ref")
    assert ex.evaluate(e, {"F_ref": 700.0}) == pytest.approx(9.1e-21, rel=1e-12)


def test_missing_variable():
    with pytest.raises(ex.EvalError) as err:
        ex.evaluate(ex.var("a") + ex.var("b"), {"a": 1.0})
    assert err.value.kind == ex.MISSING_VARIABLE


def test_product_rule():
    x, y = ex.var("x"), ex.var("y")
    g = ex.gradient(x * y, {"x": 3.0, "y": 5.0})
    assert g == {"x": 5.0, "y": 3.0}


def test_log_derivative():
    g = ex.gradient(ex.log(ex.var("x")), {"x": 2.0})
    assert g["x"] == pytest.approx(0.5, abs=1e-15)


def test_gradient_matches_fd_on_printed_style_poly():
    # -0.30*F_S + 0.23e-6*F_ref**3 + 296.45*X**3 + 805.36
    F_S, F_ref, X = ex.var("F_S"), ex.var("F_ref"), ex.var("X")
    e = -0.30 * F_S + 0.23e-6 * F_ref ** 3 + 296.45 * X ** 3 + 805.36
    point = {"F_S": 300.0, "F_ref": 750.0, "X": 0.9}
    g = ex.gradient(e, point)
    fd = fd_gradient(e, point)
    for name in fd:
        assert g[name] == pytest.approx(fd[name], rel=1e-6)


def test_jacobian_rows_match_gradients():
    x, y = ex.var("x"), ex.var("y")
    rows = ex.jacobian([x + y, x * y], {"x": 1.0, "y": 2.0})
    assert rows[0] == {"x": 1.0, "y": 1.0}
    assert rows[1] == {"x": 2.0, "y": 1.0}
    single = ex.jacobian([x * y], {"x": 1.0, "y": 2.0})
    assert single[0] == ex.gradient(x * y, {"x": 1.0, "y": 2.0})


def test_jacobian_error_reports_row():
    x = ex.var("x")
    rows = [x + 1.0, ex.log(x)]
    with pytest.raises(ex.EvalError) as err:
        ex.jacobian(rows, {"x": -1.0})
    assert any("row 1" in note for note in err.value.origin)


def test_incidence_vars():
    assert ex.incidence_vars(ex.const(5.0)) == frozenset()
    x, y = ex.var("x"), ex.var("y")
    assert ex.incidence_vars(x * ex.log(y) + x) == {"x", "y"}


def test_division_by_zero_is_error():
    with pytest.raises(ex.EvalError):
        ex.evaluate(ex.var("x") / ex.var("y"), {"x": 1.0, "y": 0.0})


def test_negative_base_fractional_power_is_error():
    with pytest.raises(ex.EvalError) as err:
        ex.evaluate(ex.var("x") ** 0.5, {"x": -1.0})
    assert err.value.kind == ex.DOMAIN_VIOLATION


def test_negative_base_integer_power_ok():
    assert ex.evaluate(ex.var("x") ** 3, {"x": -2.0}) == -8.0
    g = ex.gradient(ex.var("x") ** 3, {"x": -2.0})
    assert g["x"] == pytest.approx(12.0)


def test_exp_overflow_is_error():
    with pytest.raises(ex.EvalError):
        ex.evaluate(ex.exp(ex.var("x")), {"x": 1000.0})


def test_sigmoid_and_tanh_values():
    s = ex.evaluate(ex.sigmoid(ex.var("x")), {"x": 0.0})
    assert s == pytest.approx(0.5)
    t = ex.evaluate(ex.tanh(ex.var("x")), {"x": 0.3})
    assert t == pytest.approx(math.tanh(0.3))


def test_shared_subexpression_evaluated_once():
    x = ex.var("x")
    inner = ex.exp(x)
    e = inner + inner * inner
    v = math.e
    assert ex.evaluate(e, {"x": 1.0}) == pytest.approx(v + v * v)
    g = ex.gradient(e, {"x": 1.0})
    assert g["x"] == pytest.approx(v + 2 * v * v)


@st.composite
def random_expression(draw, depth=0):
    """Random smooth expression over x, y, z safe near the chosen point."""
    if depth > 3 or draw(st.booleans()):
        choice = draw(st.integers(0, 3))
        if choice == 0:
            return ex.const(draw(st.floats(-3, 3, allow_nan=False)))
        return ex.var(["x", "y", "z"][choice - 1])
    op = draw(st.integers(0, 5))
    a = draw(random_expression(depth=depth + 1))
    b = draw(random_expression(depth=depth + 1))
    if op == 0:
        return a + b
    if op == 1:
        return a * b
    if op == 2:
        return a - b
    if op == 3:
        return ex.exp(a * 0.1)
    if op == 4:
        return ex.log(ex.const(1.0) + a * a)
    return ex.tanh(a) + ex.sigmoid(b)


@given(random_expression(), st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
@settings(max_examples=150, deadline=None)
def test_gradient_matches_finite_differences(e, x, y, z):
    point = {"x": x, "y": y, "z": z}
    try:
        v = ex.evaluate(e, point)
    except ex.EvalError:
        return
    assert math.isfinite(v)
    g = ex.gradient(e, point)
    fd = fd_gradient(e, point)
    for name, fd_val in fd.items():
        scale = max(1.0, abs(fd_val))
        assert abs(g.get(name, 0.0) - fd_val) / scale < 1e-5


@given(random_expression(), st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
@settings(max_examples=100, deadline=None)
def test_incidence_superset_of_nonzero_gradient(e, x, y, z):
    point = {"x": x, "y": y, "z": z}
    try:
        g = ex.gradient(e, point)
    except ex.EvalError:
        return
    nonzero = {name for name, val in g.items() if val != 0.0}
    assert nonzero <= ex.incidence_vars(e)
