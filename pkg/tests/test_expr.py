"""Parser, printer and evaluator tests for the operator language."""

import math

import numpy as np
import pytest

from ocm.expr import (
    Binary,
    Const,
    EvalDomainError,
    Jet,
    ParseError,
    Power,
    apply_operator,
    eval_operator,
    multi_indices,
    parse_expr,
    parse_system,
    print_expr,
    print_system,
)
from ocm.approx import taylor_poly, PiecewisePoly
from ocm.domain import Box, build_partition

# 20 expressions exercising every production (n=1, K=1, m=2 context)
CORPUS = [
    "D(u1,(1))",
    "D(u1,(1))^2 + u1",
    "u1 + (2 * x1)",
    "sin(u1)",
    "cos(x1) * exp(u1)",
    "log(x1 + 2)",
    "abs(u1 - x1)",
    "sqrt(x1)",
    "-u1",
    "u1 / x1",
    "(u1 + x1) * (u1 - x1)",
    "D(u1,(2)) + D(u1,(1)) + u1",
    "2",
    "2.5 * x1^3",
    "x1^0",
    "-(u1 + 1)",
    "u1 * u1 * u1",
    "1 - -u1",
    "sin(cos(exp(u1)))",
    "D(u1,(1)) * D(u1,(1)) - 1",
]


def test_multi_indices_lexicographic():
    assert multi_indices(1, 2) == ((0,), (1,), (2,))
    assert multi_indices(2, 1) == ((0, 0), (0, 1), (1, 0))
    assert multi_indices(2, 2) == ((0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0))


def test_parse_single_jet_node():
    sys_ = parse_system("D(u1,(1))", 1, 1, 1)
    assert sys_.components == (Jet(1, (1,)),)
    assert sys_.M == 2  # alphas (0,), (1,)


def test_parse_square_plus_zeroth():
    # hand parse: plus(pow(jet(1,(1)), 2), jet(1,(0)))
    sys_ = parse_system("D(u1,(1))^2 + u1", 1, 1, 1)
    expected = Binary("+", Power(Jet(1, (1,)), 2), Jet(1, (0,)))
    assert sys_.components[0] == expected


def test_parse_order_exceeds_m():
    with pytest.raises(ParseError) as exc:
        parse_system("D(u2,(3))", 1, 2, 2)
    assert "exceeds m=2" in str(exc.value)
    assert exc.value.line == 1 and exc.value.col >= 1


def test_parse_bad_component_index():
    with pytest.raises(ParseError) as exc:
        parse_expr("u2", 1, 1, 1)
    assert "out of range 1..1" in str(exc.value)
    assert exc.value.col == 1


def test_parse_bad_coordinate_index():
    with pytest.raises(ParseError) as exc:
        parse_expr("x2 + 1", 1, 1, 1)
    assert exc.value.line == 1 and exc.value.col == 1


def test_parse_multi_index_arity():
    with pytest.raises(ParseError):
        parse_expr("D(u1,(1,1))", 1, 1, 2)


def test_parse_error_second_line():
    with pytest.raises(ParseError) as exc:
        parse_system("D(u1,(1))\nD(u2,(2))", 1, 2, 1)
    assert exc.value.line == 2


def test_parse_syntax_errors_have_positions():
    for text in ["u1 +", "(u1", "2 ^ u1", "foo(u1)", "x1^2.5", "u1 ) 3"]:
        with pytest.raises(ParseError) as exc:
            parse_expr(text, 1, 1, 1)
        assert exc.value.line >= 1 and exc.value.col >= 1


def test_canonical_print_matches_expected():
    assert print_expr(parse_expr("D(u1,(1))", 1, 1, 1)) == "D(u1,(1))"
    assert print_expr(parse_expr("u1 + 2*x1", 1, 1, 1)) == "u1 + (2 * x1)"


def test_round_trip_on_corpus():
    for text in CORPUS:
        tree = parse_expr(text, 1, 1, 2)
        printed = print_expr(tree)
        assert parse_expr(printed, 1, 1, 2) == tree, text


def test_system_round_trip():
    sys_ = parse_system("D(u1,(1))\nu2 + D(u1,(1))", 1, 2, 1)
    again = parse_system(print_system(sys_), 1, 2, 1)
    assert again.components == sys_.components


def test_eval_projection():
    sys_ = parse_system("D(u1,(1))", 1, 1, 1)
    assert eval_operator(sys_, (0.5,), (7.0, 0.45)) == (0.45,)


def test_eval_square_plus_zeroth():
    sys_ = parse_system("D(u1,(1))^2 + u1", 1, 1, 1)
    assert eval_operator(sys_, (0.0,), (3.0, 0.0)) == (3.0,)


def test_eval_sine_against_library():
    sys_ = parse_system("sin(u1)", 1, 1, 0)
    (val,) = eval_operator(sys_, (0.0,), (math.pi / 2,))
    assert abs(val - 1.0) <= 1e-12


def test_eval_deterministic_bitwise():
    sys_ = parse_system("sin(u1) * exp(x1) / (u1 + 2)", 1, 1, 0)
    a = eval_operator(sys_, (0.3,), (0.7,))
    b = eval_operator(sys_, (0.3,), (0.7,))
    assert a == b


def test_eval_domain_errors():
    log_sys = parse_system("log(u1)", 1, 1, 0)
    with pytest.raises(EvalDomainError):
        eval_operator(log_sys, (0.0,), (-1.0,))
    div_sys = parse_system("1 / u1", 1, 1, 0)
    with pytest.raises(EvalDomainError):
        eval_operator(div_sys, (0.0,), (0.0,))
    sqrt_sys = parse_system("sqrt(u1)", 1, 1, 0)
    with pytest.raises(EvalDomainError):
        eval_operator(sqrt_sys, (0.0,), (-4.0,))


def test_eval_rejects_nonfinite_inputs():
    sys_ = parse_system("u1", 1, 1, 0)
    with pytest.raises(ValueError):
        eval_operator(sys_, (float("inf"),), (1.0,))


def _single_piece(slope_jet, box=Box((0.0,), (1.0,))):
    partition = build_partition(box, 1)
    piece = taylor_poly((0.5,), slope_jet)
    return PiecewisePoly.from_pieces(partition, [piece])


def test_apply_operator_derivative_of_line():
    # u(x) = 0.45 (x - 0.5) on its cell; T u = u'
    sys_ = parse_system("D(u1,(1))", 1, 1, 1)
    u = _single_piece({(1, (0,)): 0.0, (1, (1,)): 0.45})
    assert apply_operator(sys_, u, (0.47,)) == pytest.approx((0.45,), abs=1e-12)


def test_apply_operator_on_skeleton_is_undefined():
    sys_ = parse_system("D(u1,(1))", 1, 1, 1)
    u = _single_piece({(1, (0,)): 0.0, (1, (1,)): 0.45})
    assert apply_operator(sys_, u, (0.0,)) is None
    assert apply_operator(sys_, u, (1.0,)) is None


def test_apply_operator_outside_domain():
    sys_ = parse_system("D(u1,(1))", 1, 1, 1)
    u = _single_piece({(1, (0,)): 0.0, (1, (1,)): 0.45})
    with pytest.raises(ValueError):
        apply_operator(sys_, u, (2.0,))


def test_apply_operator_second_order():
    # u(x) = x^2 on one cell covering x=1; T u = u'' + u = 2 + 1
    sys_ = parse_system("D(u1,(2)) + u1", 1, 1, 2)
    partition = build_partition(Box((0.0,), (2.0,)), 1)
    # Taylor of x^2 at center 1: 1 + 2(x-1) + (x-1)^2, so jet (1, 2, 2)
    piece = taylor_poly((1.0,), {(1, (0,)): 1.0, (1, (1,)): 2.0, (1, (2,)): 2.0})
    u = PiecewisePoly.from_pieces(partition, [piece])
    assert apply_operator(sys_, u, (1.0,)) == pytest.approx((3.0,), abs=1e-12)


def test_apply_operator_matches_polynomial_oracle():
    # oracle: numpy poly derivative of the 1-D piece, 1000 random pairs
    rng = np.random.default_rng(7)
    sys_ = parse_system("D(u1,(2)) + D(u1,(1))^2 + u1", 1, 1, 2)
    partition = build_partition(Box((0.0,), (1.0,)), 1)
    for _ in range(1000):
        xi = {(1, (0,)): rng.uniform(-2, 2), (1, (1,)): rng.uniform(-2, 2), (1, (2,)): rng.uniform(-2, 2)}
        center = (rng.uniform(0.2, 0.8),)
        piece = taylor_poly(center, xi)
        u = PiecewisePoly.from_pieces(partition, [piece])
        x = float(rng.uniform(0.01, 0.99))
        # standard-basis coefficients of P(t) = c0 + c1 (t - x0) + c2 (t - x0)^2
        c = [xi[(1, (0,))], xi[(1, (1,))], xi[(1, (2,))] / 2.0]
        poly = np.polynomial.Polynomial(c, domain=[-1, 1], window=[-1, 1])
        shifted = poly(np.polynomial.Polynomial([-center[0], 1.0]))
        p0 = shifted(x)
        p1 = shifted.deriv(1)(x)
        p2 = shifted.deriv(2)(x)
        expected = p2 + p1**2 + p0
        (got,) = apply_operator(sys_, u, (x,))
        assert abs(got - expected) <= 1e-9 * (1 + abs(expected))


def test_apply_operator_rejects_mismatched_jet_layout():
    # approximant built for m=1 cannot feed an order-2 operator
    sys2 = parse_system("D(u1,(2)) + u1", 1, 1, 2)
    u = _single_piece({(1, (0,)): 0.0, (1, (1,)): 0.45})
    with pytest.raises(ValueError):
        apply_operator(sys2, u, (0.5,))
