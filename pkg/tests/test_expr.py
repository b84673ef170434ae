import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critlab.expr import (ArityError, DomainError, ExpressionSyntaxError,
                          UnknownIdentifierError, parse, parse_coefficient_expression, pretty,
                          run_program)
from critlab.fields import ExprField, compile_field


def test_expdecay_potential_vanishes_at_radius_two():
    f = parse_coefficient_expression("-1 + (3-1)/r", 3)
    assert f([2.0, 0.0, 0.0]) == 0.0
    assert f([0.0, 0.0, 2.0]) == 0.0


def test_constant_zero():
    f = parse_coefficient_expression("0", 2)
    assert f([3.0, -1.0]) == 0.0
    assert f.is_constant
    np.testing.assert_array_equal(f.evaluate(np.ones((5, 2))), np.zeros(5))


def test_gaussian_value():
    f = parse_coefficient_expression("exp(-r^2)", 2)
    assert f([1.0, 0.0]) == pytest.approx(math.exp(-1), rel=1e-15)


@pytest.mark.parametrize("text,point,expected", [
    ("2^3^2", [0.0], 512.0),
    ("-x1^2", [3.0], -9.0),
    ("1 - 2 - 3", [0.0], -4.0),
    ("8 / 2 / 2", [0.0], 2.0),
    ("min(x1, 2) + max(x1, 2)", [5.0], 7.0),
    ("sqrt(abs(x1)) * cos(0) + sin(0)", [-4.0], 2.0),
    ("log(exp(x1 + x2))", [0.5, 0.25], 0.75),
    ("r", [3.0, 4.0], 5.0),
    ("1e-3 * 2.5E2", [0.0], 0.25),
])
def test_precedence_and_functions(text, point, expected):
    assert parse_coefficient_expression(text, len(point))(point) == pytest.approx(expected)


def test_syntax_error_reports_offset():
    with pytest.raises(ExpressionSyntaxError) as exc:
        parse("1 + * 2", 1)
    assert exc.value.offset == 4


def test_unbalanced_parenthesis():
    with pytest.raises(ExpressionSyntaxError):
        parse("(1 + x1", 1)


def test_arity_mismatch():
    with pytest.raises(ArityError):
        parse("exp(1, 2)", 1)
    with pytest.raises(ArityError):
        parse("min(1)", 1)


def test_unknown_identifier_and_out_of_range_variable():
    with pytest.raises(UnknownIdentifierError) as exc:
        parse("foo(1)", 1)
    assert exc.value.offset == 0
    with pytest.raises(UnknownIdentifierError):
        parse("x3", 2)


def test_pointwise_domain_error_and_vectorized_nan():
    f = parse_coefficient_expression("log(x1)", 1)
    with pytest.raises(DomainError):
        f([-1.0])
    out = f.evaluate([[-1.0], [1.0]])
    assert math.isnan(out[0]) and out[1] == 0.0


def test_wrong_point_dimension():
    f = parse_coefficient_expression("x1", 2)
    with pytest.raises(ValueError):
        f([1.0])


# random expression trees -------------------------------------------------

_leaf = st.one_of(
    st.sampled_from(["x1", "x2", "r"]),
    st.floats(0.0, 100.0, allow_nan=False).map(lambda v: repr(round(v, 3))),
)


def _combine(children):
    bin_ = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda t: f"({t[0]}) {t[1]} ({t[2]})")
    un = st.tuples(st.sampled_from(["exp", "sin", "cos", "abs", "sqrt", "log", "-"]),
                   children).map(lambda t: f"{t[0]}({t[1]})")
    two = st.tuples(st.sampled_from(["min", "max"]), children, children).map(
        lambda t: f"{t[0]}({t[1]}, {t[2]})")
    return st.one_of(bin_, un, two)


expressions = st.recursive(_leaf, _combine, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(expressions)
def test_pretty_parse_pretty_fixed_point(text):
    once = pretty(parse(text, 2))
    assert pretty(parse(once, 2)) == once


@settings(max_examples=150, deadline=None)
@given(expressions)
def test_pretty_preserves_values(text):
    pts = np.array([[0.3, -1.2], [2.0, 0.5], [-0.7, 0.1]])
    a = ExprField.parse(text, 2).evaluate(pts)
    b = ExprField.parse(pretty(parse(text, 2)), 2).evaluate(pts)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300, equal_nan=True)


@settings(max_examples=150, deadline=None)
@given(expressions)
def test_compiled_program_matches_tree(text):
    f = ExprField.parse(text, 2)
    code, consts = compile_field(f)
    pts = np.array([[0.3, -1.2], [2.0, 0.5], [-0.7, 0.1], [0.0, 0.0]])
    np.testing.assert_allclose(run_program(code, consts, pts), f.evaluate(pts),
                               rtol=1e-12, atol=1e-300, equal_nan=True)
