"""Symbolic expression trees: generation, protected evaluation, simplification, text I/O.

A tree is built from immutable :class:`Node` objects.  Leaves are either constants
or variables, where a variable stores a slot index into the input tuple described
by the tree's signature (an ordered tuple of slot names).

Evaluation uses protected operators so that any finite input produces a finite
output; every node result is saturated to ``[-BIG, BIG]``.

The text grammar (see README) is ordinary infix notation::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := '-' unary | power
    power := atom ('^' unary)?
    atom  := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

BINARY_OPS = ("add", "sub", "mul", "div", "pow")
UNARY_OPS = ("sin", "cos", "exp", "log")
ALL_OPS = BINARY_OPS + UNARY_OPS

# postfix opcodes shared with the simulation kernel
OP_CONST, OP_VAR = 0, 1
OPCODES = {name: i + 2 for i, name in enumerate(ALL_OPS)}

BIG = 1e100
EPS = 1e-9
EXP_CLAMP = 50.0
POW_CLAMP = 5.0

_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 4}
_UNARY_PREC = 3
_ATOM_PREC = 5


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos} in {text!r}")
        self.text = text
        self.pos = pos


class UnknownVariableError(ExprError):
    def __init__(self, name: str, signature: Sequence[str]):
        super().__init__(f"unknown variable {name!r}; expected one of {list(signature)}")
        self.name = name


def arity(op: str) -> int:
    if op in BINARY_OPS:
        return 2
    if op in UNARY_OPS:
        return 1
    return 0


class Node:
    """Immutable tree node.  ``op`` is an operator name, ``"const"`` or ``"var"``."""

    __slots__ = ("op", "children", "value", "_key")

    def __init__(self, op: str, children: tuple["Node", ...] = (), value: float | int | None = None):
        if op not in ALL_OPS and op not in ("const", "var"):
            raise ExprError(f"unknown node kind {op!r}")
        if len(children) != arity(op):
            raise ExprError(f"{op} takes {arity(op)} children, got {len(children)}")
        self.op = op
        self.children = tuple(children)
        if op == "const":
            value = float(value)
        elif op == "var":
            value = int(value)
        self.value = value
        self._key = None

    @staticmethod
    def const(v: float) -> "Node":
        return Node("const", value=v)

    @staticmethod
    def var(slot: int) -> "Node":
        return Node("var", value=slot)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def key(self) -> tuple:
        if self._key is None:
            if self.op == "const":
                # repr keeps -0.0 and 0.0 apart
                self._key = ("const", repr(self.value))
            elif self.op == "var":
                self._key = ("var", self.value)
            else:
                self._key = (self.op,) + tuple(c.key() for c in self.children)
        return self._key

    def __eq__(self, other) -> bool:
        return isinstance(other, Node) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        if self.op == "const":
            return f"Node.const({self.value!r})"
        if self.op == "var":
            return f"Node.var({self.value})"
        return f"Node({self.op!r}, {self.children!r})"


def depth(node: Node) -> int:
    if not node.children:
        return 1
    return 1 + max(depth(c) for c in node.children)


def size(node: Node) -> int:
    return 1 + sum(size(c) for c in node.children)


def iter_nodes(node: Node, path: tuple[int, ...] = (), level: int = 1) -> Iterator[tuple[tuple[int, ...], Node, int]]:
    """Pre-order walk yielding ``(path, node, level)``; the root has level 1.

    The pre-order position of a node is its stable id for crossover addressing.
    """
    yield path, node, level
    for i, c in enumerate(node.children):
        yield from iter_nodes(c, path + (i,), level + 1)


def get_at(node: Node, path: Sequence[int]) -> Node:
    for i in path:
        node = node.children[i]
    return node


def replace_at(node: Node, path: Sequence[int], new: Node) -> Node:
    if not path:
        return new
    i = path[0]
    kids = list(node.children)
    kids[i] = replace_at(kids[i], path[1:], new)
    return Node(node.op, tuple(kids), node.value)


def variables(node: Node) -> set[int]:
    return {n.value for _, n, _ in iter_nodes(node) if n.op == "var"}


@dataclass(frozen=True)
class ExprTree:
    """A tree together with the names of its input slots."""

    root: Node
    signature: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "signature", tuple(self.signature))
        for v in variables(self.root):
            if not 0 <= v < len(self.signature):
                raise ExprError(f"variable slot {v} outside signature of arity {len(self.signature)}")

    @property
    def depth(self) -> int:
        return depth(self.root)

    @property
    def size(self) -> int:
        return size(self.root)

    def evaluate(self, inputs):
        return evaluate(self, inputs)

    def render(self) -> str:
        return render(self)

    def __str__(self) -> str:
        return render(self)


@dataclass(frozen=True)
class FunctionSet:
    """Operators and leaf distribution used to sample trees over ``signature``."""

    operators: tuple[str, ...]
    signature: tuple[str, ...] = ()
    const_range: tuple[float, float] = (-5.0, 5.0)
    p_const: float = 0.3
    p_leaf: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))
        object.__setattr__(self, "signature", tuple(self.signature))
        if not self.operators:
            raise ExprError("function set needs at least one operator")
        bad = [op for op in self.operators if op not in ALL_OPS]
        if bad:
            raise ExprError(f"unknown operators {bad}")
        if not self.signature and self.p_const <= 0:
            raise ExprError("function set has no leaves to draw from")

    def with_signature(self, signature: Sequence[str]) -> "FunctionSet":
        return FunctionSet(self.operators, tuple(signature), self.const_range, self.p_const, self.p_leaf)

    def sample_leaf(self, rng: np.random.Generator) -> Node:
        if not self.signature or rng.random() < self.p_const:
            lo, hi = self.const_range
            return Node.const(float(rng.uniform(lo, hi)))
        return Node.var(int(rng.integers(len(self.signature))))

    def sample_operator(self, rng: np.random.Generator) -> str:
        return self.operators[int(rng.integers(len(self.operators)))]


SHO_OPERATORS = ("add", "sub", "mul", "div", "pow")
ACROBOT_OPERATORS = SHO_OPERATORS + ("sin", "cos")
CSTR_OPERATORS = SHO_OPERATORS + ("exp", "log")


def sample_node(fset: FunctionSet, max_depth: int, mode: str, rng: np.random.Generator, level: int = 1) -> Node:
    if max_depth < 1:
        raise ExprError("depth must be >= 1")
    if mode not in ("full", "grow"):
        raise ExprError(f"unknown sampling mode {mode!r}")
    if level >= max_depth or (mode == "grow" and rng.random() < fset.p_leaf):
        return fset.sample_leaf(rng)
    op = fset.sample_operator(rng)
    kids = tuple(sample_node(fset, max_depth, mode, rng, level + 1) for _ in range(arity(op)))
    return Node(op, kids)


def sample_tree(fset: FunctionSet, depth: int, mode: str, rng: np.random.Generator) -> ExprTree:
    """Draw a random tree; in ``full`` mode every leaf sits at exactly ``depth``."""
    return ExprTree(sample_node(fset, depth, mode, rng), fset.signature)


# ---------------------------------------------------------------------------
# protected evaluation (numpy; works elementwise on scalars or arrays)


def _sat(x):
    return np.clip(x, -BIG, BIG)


def apply_op(op: str, a, b=None):
    if op == "add":
        r = a + b
    elif op == "sub":
        r = a - b
    elif op == "mul":
        r = a * b
    elif op == "div":
        small = np.abs(b) < EPS
        r = np.where(small, a * np.sign(b) / EPS, a / np.where(small, 1.0, b))
    elif op == "pow":
        e = np.clip(b, -POW_CLAMP, POW_CLAMP)
        m = np.abs(a)
        m = np.where(e < 0, np.maximum(m, EPS), m)
        r = np.sign(a) * m**e
    elif op == "sin":
        r = np.sin(a)
    elif op == "cos":
        r = np.cos(a)
    elif op == "exp":
        r = np.exp(np.clip(a, -EXP_CLAMP, EXP_CLAMP))
    elif op == "log":
        r = np.log(np.abs(a) + EPS)
    else:
        raise ExprError(f"unknown operator {op!r}")
    return _sat(r)


def eval_node(node: Node, inputs):
    if node.op == "const":
        return np.float64(node.value)
    if node.op == "var":
        return _sat(np.asarray(inputs[node.value], dtype=float))
    if len(node.children) == 1:
        return apply_op(node.op, eval_node(node.children[0], inputs))
    return apply_op(node.op, eval_node(node.children[0], inputs), eval_node(node.children[1], inputs))


def evaluate(tree: ExprTree | Node, inputs):
    """Evaluate ``tree`` on ``inputs`` (one entry per signature slot).

    Entries may be scalars or equally shaped arrays; scalars give a float back.
    """
    root = tree.root if isinstance(tree, ExprTree) else tree
    if isinstance(tree, ExprTree) and len(inputs) != len(tree.signature):
        raise ExprError(f"expected {len(tree.signature)} inputs, got {len(inputs)}")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = eval_node(root, inputs)
    if np.ndim(out) == 0:
        return float(out)
    return out


def compile_postfix(node: Node) -> tuple[list[int], list[float]]:
    """Flatten to postfix (opcode, argument) lists for the simulation kernel."""
    ops: list[int] = []
    args: list[float] = []

    def walk(n: Node):
        for c in n.children:
            walk(c)
        if n.op == "const":
            ops.append(OP_CONST)
            args.append(n.value)
        elif n.op == "var":
            ops.append(OP_VAR)
            args.append(float(n.value))
        else:
            ops.append(OPCODES[n.op])
            args.append(0.0)

    walk(node)
    return ops, args


# ---------------------------------------------------------------------------
# simplification

_COMMUTATIVE = ("add", "mul")


def _is_const(n: Node, v: float | None = None) -> bool:
    return n.op == "const" and (v is None or n.value == v)


def _is_neg(n: Node) -> bool:
    return n.op == "sub" and _is_const(n.children[0], 0.0)


def _simplify_once(n: Node, names: Sequence[str]) -> Node:
    if n.is_leaf:
        return n
    kids = tuple(_simplify_once(c, names) for c in n.children)
    op = n.op
    if all(_is_const(c) for c in kids):
        return Node.const(float(apply_op(op, *[c.value for c in kids])))
    if op in _COMMUTATIVE:
        kids = tuple(sorted(kids, key=lambda c: _render(c, names)))
    if len(kids) == 2:
        a, b = kids
        if op == "add":
            if _is_const(a, 0.0):
                return b
            if _is_const(b, 0.0):
                return a
        elif op == "sub":
            if _is_const(b, 0.0):
                return a
            if a == b:
                return Node.const(0.0)
            if _is_const(a, 0.0) and _is_neg(b):
                return b.children[1]
        elif op == "mul":
            if _is_const(a, 1.0):
                return b
            if _is_const(b, 1.0):
                return a
            if _is_const(a, 0.0) or _is_const(b, 0.0):
                return Node.const(0.0)
        elif op == "div":
            if _is_const(b, 1.0):
                return a
            if _is_const(a, 0.0):
                return Node.const(0.0)
            if a == b:
                return Node.const(1.0)
        elif op == "pow":
            if _is_const(b, 1.0):
                return a
    return Node(op, kids)


def simplify_node(node: Node, names: Sequence[str] = ()) -> Node:
    names = tuple(names) or tuple(f"v{i}" for i in range(max(variables(node), default=-1) + 1))
    prev = None
    while prev is None or node != prev:
        prev, node = node, _simplify_once(node, names)
    return node


def simplify(tree: ExprTree) -> ExprTree:
    """Constant folding, identities, cancellation and canonical operand order.

    Every rewrite is exact in floating point, except ``x/x -> 1`` where the
    protected division differs for ``|x| < EPS``.  Node count never grows.
    """
    return ExprTree(simplify_node(tree.root, tree.signature), tree.signature)


def measure(tree: ExprTree | Node) -> tuple[int, int]:
    root = tree.root if isinstance(tree, ExprTree) else tree
    return depth(root), size(root)


# ---------------------------------------------------------------------------
# rendering


def format_const(v: float) -> str:
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def _prec(n: Node) -> int:
    if n.op == "const":
        return _UNARY_PREC if (n.value < 0 or repr(n.value).startswith("-")) else _ATOM_PREC
    if n.op == "var" or n.op in UNARY_OPS:
        return _ATOM_PREC
    if _is_neg(n) and not _is_const(n.children[1]):
        return _UNARY_PREC
    return _PREC[n.op]


def _render(n: Node, names: Sequence[str]) -> str:
    if n.op == "const":
        return format_const(n.value)
    if n.op == "var":
        return names[n.value]
    if n.op in UNARY_OPS:
        return f"{n.op}({_render(n.children[0], names)})"
    a, b = n.children
    if _is_neg(n) and not _is_const(b):
        s = _render(b, names)
        return f"-({s})" if _prec(b) < _UNARY_PREC else f"-{s}"
    p = _PREC[n.op]
    left, right = _render(a, names), _render(b, names)
    if n.op == "pow":
        if _prec(a) <= p:
            left = f"({left})"
        if _prec(b) < p:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(a) < p:
        left = f"({left})"
    if _prec(b) <= p or _prec(b) == _UNARY_PREC:
        right = f"({right})"
    return f"{left}{_SYMBOL[n.op]}{right}"


def render(tree: ExprTree | Node, signature: Sequence[str] | None = None) -> str:
    """Infix text with minimal parentheses; ``parse(render(t))`` rebuilds ``t``."""
    if isinstance(tree, ExprTree):
        return _render(tree.root, tree.signature)
    return _render(tree, signature or [f"v{i}" for i in range(max(variables(tree), default=-1) + 1)])


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise ExprSyntaxError("unexpected character", text, pos)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if value == "**":
            value = "^"
        toks.append((kind, value, start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, signature: Sequence[str], aliases: dict[str, str]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.slots = {name: i for i, name in enumerate(signature)}
        for alias, target in aliases.items():
            if target in self.slots and alias not in self.slots:
                self.slots[alias] = self.slots[target]
        self.signature = signature

    def peek(self, k: int = 0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value: str):
        kind, v, pos = self.take()
        if v != value:
            raise ExprSyntaxError(f"expected {value!r}", self.text, pos)

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = "add" if self.take()[1] == "+" else "sub"
            node = Node(op, (node, self.term()))
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = "mul" if self.take()[1] == "*" else "div"
            node = Node(op, (node, self.unary()))
        return node

    def unary(self) -> Node:
        kind, v, _ = self.peek()
        if kind == "op" and v == "-":
            self.take()
            nk, nv, _ = self.peek()
            if nk == "num" and self.peek(1)[1] != "^":
                self.take()
                return Node.const(-float(nv))
            return Node("sub", (Node.const(0.0), self.unary()))
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Node("pow", (base, self.unary()))
        return base

    def atom(self) -> Node:
        kind, v, pos = self.take()
        if kind == "num":
            return Node.const(float(v))
        if kind == "name":
            if v in UNARY_OPS:
                self.expect("(")
                inner = self.expr()
                self.expect(")")
                return Node(v, (inner,))
            if v not in self.slots:
                raise UnknownVariableError(v, self.signature)
            return Node.var(self.slots[v])
        if kind == "op" and v == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", self.text, pos)
        raise ExprSyntaxError(f"unexpected token {v!r}", self.text, pos)


def parse(text: str, signature: Sequence[str], aliases: dict[str, str] | None = None) -> ExprTree:
    """Parse ``text`` against ``signature``; ``aliases`` maps extra names to slot names."""
    p = _Parser(text, tuple(signature), aliases or {})
    node = p.expr()
    kind, v, pos = p.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected token {v!r}", text, pos)
    return ExprTree(node, signature)
