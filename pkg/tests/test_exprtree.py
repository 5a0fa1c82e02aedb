import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import SIG, finite_floats, trees
from sympolicy.exprtree import (
    EPS,
    SHO_OPERATORS,
    ExprError,
    ExprSyntaxError,
    ExprTree,
    FunctionSet,
    Node,
    UnknownVariableError,
    evaluate,
    measure,
    parse,
    render,
    sample_tree,
    simplify,
)

Y = ("y1", "y2")


def test_full_depth_two_is_op_of_leaves(rng):
    fs = FunctionSet(("add",), Y)
    for _ in range(50):
        t = sample_tree(fs, 2, "full", rng)
        assert t.root.op == "add" and all(c.is_leaf for c in t.root.children)


def test_depth_one_grow_is_leaf(rng):
    fs = FunctionSet(SHO_OPERATORS, Y)
    assert all(sample_tree(fs, 1, "grow", rng).root.is_leaf for _ in range(50))


def test_grow_depth_distribution(rng):
    fs = FunctionSet(SHO_OPERATORS, ("y1", "y2", "xstar"))
    depths = [sample_tree(fs, 4, "grow", rng).depth for _ in range(10_000)]
    assert max(depths) == 4
    assert min(depths) < 4


def test_full_mode_leaves_all_at_depth(rng):
    fs = FunctionSet(("add", "sin"), Y)
    t = sample_tree(fs, 5, "full", rng)
    from sympolicy.exprtree import iter_nodes
    assert {lvl for _, n, lvl in iter_nodes(t.root) if n.is_leaf} == {5}


def test_empty_function_set_rejected():
    with pytest.raises(ExprError):
        FunctionSet((), Y)
    with pytest.raises(ExprError):
        FunctionSet(("nope",), Y)


def test_evaluate_examples():
    assert evaluate(parse("y1 + 2*y2", Y), (1, 3)) == 7
    assert evaluate(parse("sin(0)", Y), (0, 0)) == 0
    sig = ("y1", "y2", "xstar")
    assert evaluate(parse("-0.61*y2 + xstar", sig), (0, 1, 0)) == pytest.approx(-0.61)
    assert evaluate(parse("0.45*(a1+xstar)", ("a1", "xstar")), (1, 1)) == pytest.approx(0.9)


def test_evaluate_vectorised():
    t = parse("y1*y2 - 1", Y)
    out = evaluate(t, (np.arange(4.0), np.full(4, 2.0)))
    np.testing.assert_array_equal(out, [-1, 1, 3, 5])


@pytest.mark.parametrize("text, inputs, expected", [
    ("y1/y2", (1.0, 0.0), 0.0),  # sign(0) = 0
    ("y1/y2", (1.0, 1e-12), 1 / EPS),
    ("y1/y2", (3.0, -1e-12), -3 / EPS),
    ("log(y1)", (0.0, 0.0), math.log(EPS)),
    ("log(y1)", (-math.e, 0.0), math.log(math.e + EPS)),
    ("exp(y1)", (1000.0, 0.0), math.exp(50.0)),
    ("y1^y2", (-2.0, 2.0), -4.0),
    ("y1^y2", (2.0, 9.0), 32.0),
    ("y1^y2", (1e-12, -1.0), 1 / EPS),
    ("y1^y2", (0.0, -1.0), 0.0),  # sign(0) wins over the floored magnitude
])
def test_protected_operators(text, inputs, expected):
    assert evaluate(parse(text, Y), inputs) == pytest.approx(expected, rel=1e-12)


@given(trees, st.tuples(finite_floats, finite_floats, finite_floats))
def test_protected_totality(tree, inputs):
    assert math.isfinite(evaluate(tree, inputs))


def test_protected_totality_fuzz(rng):
    fs = FunctionSet(SHO_OPERATORS + ("sin", "cos", "exp", "log"), SIG)
    for _ in range(200):
        t = sample_tree(fs, int(rng.integers(1, 8)), "grow", rng)
        X = rng.uniform(-1e6, 1e6, size=(3, 500)) * rng.choice([1e-9, 1.0, 1e3], size=(3, 500))
        assert np.isfinite(evaluate(t, tuple(X))).all()


def test_simplify_examples():
    assert render(simplify(parse("(y1 - y1)", Y))) == "0"
    assert render(simplify(parse("(2*3)*y1", Y))) == "6*y1"
    assert render(simplify(parse("-(-y1)", Y))) == "y1"
    assert render(simplify(parse("y2*1 + 0", Y))) == "y2"


def test_simplify_canonical_order():
    a = simplify(parse("y2 + y1", Y))
    b = simplify(parse("y1 + y2", Y))
    assert a == b


@given(trees)
def test_simplify_never_grows(tree):
    assert simplify(tree).size <= tree.size


@given(trees)
def test_simplify_idempotent(tree):
    once = simplify(tree)
    assert simplify(once) == once


def test_measure():
    assert measure(Node.var(0)) == (1, 1)
    assert measure(Node("add", (Node.var(0), Node.const(1)))) == (2, 3)
    # add(add(mul(-2, a1), mul(2.6, a2)), xstar), counted by hand
    assert measure(parse("-2*a1 + 2.60*a2 + xstar", ("a1", "a2", "xstar"))) == (4, 9)


def test_render_examples():
    assert render(ExprTree(Node.const(1.5), ())) == "1.5"
    t = ExprTree(Node("mul", (Node.const(2), Node.var(0))), ("a1",))
    assert render(t) == "2*a1"


@pytest.mark.parametrize("text", ["a-(b-c)", "a/(b*c)", "(a^b)^c", "a^b^c", "-a^2", "(-a)^2", "a*-b",
                                  "a--b", "sin(a)*(b+c)", "-(a+b)", "a^(-1.5)", "2.5e-07*a"])
def test_roundtrip_text(text):
    sig = ("a", "b", "c")
    t = parse(text, sig)
    again = parse(render(t), sig)
    assert again == t
    assert render(again) == render(t)


@given(trees)
def test_parse_render_roundtrip(tree):
    assert parse(render(tree), SIG) == tree


def test_parse_aliases_and_power_synonym():
    t = parse("u**2", ("u1",), {"u": "u1"})
    assert render(t) == "u1^2"


@pytest.mark.parametrize("text", ["sin(", "y1 +", "3 y1", "()", "y1 $ 2", ""])
def test_syntax_errors(text):
    with pytest.raises(ExprSyntaxError):
        parse(text, Y)


def test_unknown_variable():
    with pytest.raises(UnknownVariableError):
        parse("q7", ("y1", "y2", "u1", "xstar"))


def test_signature_arity_checked():
    with pytest.raises(ExprError):
        ExprTree(Node.var(3), Y)
    with pytest.raises(ExprError):
        evaluate(parse("y1", Y), (1.0,))


def test_constant_key_keeps_signed_zero():
    assert Node.const(0.0) != Node.const(-0.0)
