"""Pair-rooted expression trees: the program each dog runs every step.

A program is ``(pair X Y)`` where ``X`` and ``Y`` compute the two force
components. Inner nodes are arithmetic operators over reals (division is
protected, ``qif`` is a four-way conditional); leaves are references into the
active terminal set or numeric constants.

Trees are immutable. Nodes are addressed by *paths*: tuples of child indices
from the root, so ``(0,)`` is the x subtree and ``(1, 2)`` is the third child
of the y subtree.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np
from numba import njit

D_MAX = 10


class OpKind(enum.Enum):
    NEG = ("neg", 1)
    SUB = ("-", 2)
    ADD = ("+", 2)
    MUL = ("*", 2)
    DIV = ("div", 2)
    QIF = ("qif", 4)
    PAIR = ("pair", 2)

    def __init__(self, symbol: str, arity: int):
        self.symbol = symbol
        self.arity = arity


FUNCTIONS = tuple(k for k in OpKind if k is not OpKind.PAIR)
_BY_SYMBOL = {k.symbol: k for k in OpKind}


@dataclass(frozen=True, slots=True)
class Param:
    index: int


@dataclass(frozen=True, slots=True)
class Const:
    value: float


@dataclass(frozen=True, slots=True)
class Op:
    kind: OpKind
    args: tuple

    def __post_init__(self):
        if len(self.args) != self.kind.arity:
            raise ValueError(f"{self.kind.symbol} takes {self.kind.arity} arguments, got {len(self.args)}")


Node = Union[Param, Const, Op]
Path = tuple


@dataclass(frozen=True, slots=True)
class ExprTree:
    """A ``pair`` root holding the x-force and y-force subtrees."""

    x: Node
    y: Node

    @property
    def root(self) -> Op:
        return Op(OpKind.PAIR, (self.x, self.y))

    def __str__(self) -> str:
        return serialize(self)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def protected_div(a: float, b: float) -> float:
    if b == 0.0:
        return 1.0
    return a / b


def eval_node(node: Node, params: Sequence[float]) -> float:
    if type(node) is Param:
        return params[node.index]
    if type(node) is Const:
        return node.value
    kind, args = node.kind, node.args
    if kind is OpKind.QIF:
        a, b, c, d = (eval_node(arg, params) for arg in args)
        return c if a <= b else d
    if kind is OpKind.NEG:
        return -eval_node(args[0], params)
    a = eval_node(args[0], params)
    b = eval_node(args[1], params)
    if kind is OpKind.ADD:
        return a + b
    if kind is OpKind.SUB:
        return a - b
    if kind is OpKind.MUL:
        return a * b
    if kind is OpKind.DIV:
        return protected_div(a, b)
    raise ValueError("pair is only allowed at the root")


def evaluate(tree: ExprTree, params: Sequence[float]) -> tuple[float, float]:
    """Evaluate both force components. Non-finite results are passed through."""
    return eval_node(tree.x, params), eval_node(tree.y, params)


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

def children(node) -> tuple:
    if isinstance(node, ExprTree):
        return (node.x, node.y)
    return node.args if type(node) is Op else ()


def iter_nodes(tree: ExprTree, include_root: bool = True) -> Iterator[tuple[Path, Node]]:
    """Pre-order walk yielding ``(path, node)``."""
    if include_root:
        yield (), tree.root
    stack = [((1,), tree.y), ((0,), tree.x)]
    while stack:
        path, node = stack.pop()
        yield path, node
        if type(node) is Op:
            for i in range(len(node.args) - 1, -1, -1):
                stack.append((path + (i,), node.args[i]))


def node_depth(node: Node) -> int:
    if type(node) is not Op:
        return 0
    return 1 + max(node_depth(a) for a in node.args)


def depth(tree: ExprTree) -> int:
    """Depth of the deepest node, counting the pair root as depth 0."""
    return 1 + max(node_depth(tree.x), node_depth(tree.y))


def size(tree: ExprTree) -> int:
    return sum(1 for _ in iter_nodes(tree))


def get_node(tree: ExprTree, path: Path):
    node = tree
    for i in path:
        node = children(node)[i]
    return node if path else tree.root


def replace_at(tree: ExprTree, path: Path, new: Node) -> ExprTree:
    if not path:
        raise ValueError("cannot replace the pair root")

    def rebuild(node, rest):
        if not rest:
            return new
        args = list(node.args)
        args[rest[0]] = rebuild(args[rest[0]], rest[1:])
        return Op(node.kind, tuple(args))

    if path[0] == 0:
        return ExprTree(rebuild(tree.x, path[1:]), tree.y)
    return ExprTree(tree.x, rebuild(tree.y, path[1:]))


def select_node(tree: ExprTree, rng: np.random.Generator, exclude_root: bool = True) -> Path:
    """Uniformly random node path (never the root when ``exclude_root``)."""
    paths = [p for p, _ in iter_nodes(tree, include_root=not exclude_root)]
    return paths[int(rng.integers(len(paths)))]


def max_param_index(tree: ExprTree) -> int:
    return max((n.index for _, n in iter_nodes(tree, False) if type(n) is Param), default=-1)


# ---------------------------------------------------------------------------
# random generation
# ---------------------------------------------------------------------------

class Method(str, enum.Enum):
    FULL = "full"
    GROW = "grow"


def random_terminal(arity: int, rng: np.random.Generator, const_sd: float = 1.0) -> Node:
    if rng.random() < 0.5:
        return Param(int(rng.integers(arity)))
    return Const(float(rng.standard_normal()) * const_sd)


def grow_random(depth_budget: int, arity: int, method: Method, rng: np.random.Generator,
                const_sd: float = 1.0) -> Node:
    """Random subtree no deeper than ``depth_budget`` below its own root.

    FULL puts operators everywhere above the budget; GROW flips a fair coin
    between terminal and operator at every node.
    """
    if depth_budget <= 0:
        return random_terminal(arity, rng, const_sd)
    if method is Method.GROW and rng.random() < 0.5:
        return random_terminal(arity, rng, const_sd)
    kind = FUNCTIONS[int(rng.integers(len(FUNCTIONS)))]
    return Op(kind, tuple(grow_random(depth_budget - 1, arity, method, rng, const_sd)
                          for _ in range(kind.arity)))


def random_tree(depth_budget: int, arity: int, method: Method, rng: np.random.Generator,
                const_sd: float = 1.0) -> ExprTree:
    return ExprTree(grow_random(depth_budget, arity, method, rng, const_sd),
                    grow_random(depth_budget, arity, method, rng, const_sd))


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

class ParseError(ValueError):
    def __init__(self, position: int, message: str):
        super().__init__(f"at offset {position}: {message}")
        self.position = position
        self.message = message


_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")
_PARAM = re.compile(r"p(\d+)$")


def _format_const(value: float) -> str:
    return format(value, ".17g")


def serialize_node(node: Node, labels: Sequence[str] | None = None) -> str:
    if type(node) is Param:
        return labels[node.index] if labels else f"p{node.index}"
    if type(node) is Const:
        return _format_const(node.value)
    inner = " ".join(serialize_node(a, labels) for a in node.args)
    return f"({node.kind.symbol} {inner})"


def serialize(tree: ExprTree, labels: Sequence[str] | None = None) -> str:
    """S-expression text; terminals use ``labels`` if given, else ``p<i>``."""
    return f"(pair {serialize_node(tree.x, labels)} {serialize_node(tree.y, labels)})"


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ParseError(pos, "unexpected character")
        if m.end() == pos:
            break
        start = m.start(m.lastindex)
        tokens.append((start, m.group(m.lastindex)))
        pos = m.end()
    return tokens


def parse(text: str, labels: Sequence[str] | None = None, arity: int | None = None,
          d_max: int = D_MAX) -> ExprTree:
    """Parse ``(pair X Y)`` text.

    Terminals may be written ``p<i>`` or as a name from ``labels``. ``arity``
    (default ``len(labels)`` when labels are given) bounds parameter indices.
    """
    names = {name: i for i, name in enumerate(labels or ())}
    if arity is None and labels is not None:
        arity = len(labels)
    tokens = _tokenize(text)
    pos = 0

    def peek():
        if pos >= len(tokens):
            raise ParseError(len(text), "unexpected end of input")
        return tokens[pos]

    def read():
        nonlocal pos
        tok = peek()
        pos += 1
        return tok

    def atom(offset: int, tok: str) -> Node:
        if tok in names:
            return Param(names[tok])
        m = _PARAM.match(tok)
        if m:
            index = int(m.group(1))
            if arity is not None and index >= arity:
                raise ParseError(offset, f"parameter {tok} out of range for arity {arity}")
            return Param(index)
        try:
            value = float(tok)
        except ValueError:
            raise ParseError(offset, f"unknown symbol {tok}") from None
        if not math.isfinite(value):
            raise ParseError(offset, f"non-finite constant {tok}")
        return Const(value)

    def expr(level: int) -> Node:
        offset, tok = read()
        if tok == ")":
            raise ParseError(offset, "unexpected )")
        if tok != "(":
            node = atom(offset, tok)
        else:
            op_offset, sym = read()
            if sym in "()":
                raise ParseError(op_offset, "expected operator")
            kind = _BY_SYMBOL.get(sym)
            if kind is None:
                raise ParseError(op_offset, f"unknown symbol {sym}")
            if kind is OpKind.PAIR:
                raise ParseError(op_offset, "pair is only allowed at the root")
            args = []
            while peek()[1] != ")":
                args.append(expr(level + 1))
            read()
            if len(args) != kind.arity:
                raise ParseError(op_offset, f"wrong arity for {sym}: expected {kind.arity}, got {len(args)}")
            node = Op(kind, tuple(args))
        if level > d_max:
            raise ParseError(offset, f"depth exceeds {d_max}")
        return node

    offset, tok = read()
    if tok != "(":
        raise ParseError(offset, "missing pair root")
    op_offset, sym = read()
    if sym != "pair":
        raise ParseError(op_offset, "missing pair root")
    x = expr(1)
    y = expr(1)
    end_offset, tok = read()
    if tok != ")":
        raise ParseError(end_offset, "wrong arity for pair: expected 2")
    if pos != len(tokens):
        raise ParseError(tokens[pos][0], "trailing input after tree")
    return ExprTree(x, y)


# ---------------------------------------------------------------------------
# compiled form for the simulation kernels
# ---------------------------------------------------------------------------

# opcodes of the postfix program
OP_CONST, OP_PARAM, OP_NEG, OP_SUB, OP_ADD, OP_MUL, OP_DIV, OP_QIF = range(8)
_OPCODE = {OpKind.NEG: OP_NEG, OpKind.SUB: OP_SUB, OpKind.ADD: OP_ADD, OpKind.MUL: OP_MUL,
           OpKind.DIV: OP_DIV, OpKind.QIF: OP_QIF}


@dataclass(frozen=True)
class Program:
    """Postfix encoding: leaves the x then y value on the stack."""

    codes: np.ndarray  # int64 opcodes
    args: np.ndarray  # float64 constant values or parameter indices
    stack_size: int


def compile_tree(tree: ExprTree) -> Program:
    codes: list[int] = []
    args: list[float] = []
    max_stack = 0
    height = 0

    def emit(code, arg, delta):
        nonlocal height, max_stack
        codes.append(code)
        args.append(arg)
        height += delta
        max_stack = max(max_stack, height)

    def walk(node):
        if type(node) is Const:
            emit(OP_CONST, node.value, 1)
        elif type(node) is Param:
            emit(OP_PARAM, float(node.index), 1)
        else:
            for a in node.args:
                walk(a)
            emit(_OPCODE[node.kind], 0.0, 1 - node.kind.arity)

    walk(tree.x)
    walk(tree.y)
    return Program(np.array(codes, dtype=np.int64), np.array(args, dtype=np.float64), max_stack)


@njit(cache=True, nogil=True)
def run_program(codes, args, params, stack):
    """Execute a compiled program; ``stack`` is caller-provided scratch."""
    sp = 0
    for pc in range(codes.shape[0]):
        c = codes[pc]
        if c == OP_CONST:
            stack[sp] = args[pc]
            sp += 1
        elif c == OP_PARAM:
            stack[sp] = params[int(args[pc])]
            sp += 1
        elif c == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif c == OP_QIF:
            a = stack[sp - 4]
            b = stack[sp - 3]
            stack[sp - 4] = stack[sp - 2] if a <= b else stack[sp - 1]
            sp -= 3
        else:
            a = stack[sp - 2]
            b = stack[sp - 1]
            if c == OP_SUB:
                r = a - b
            elif c == OP_ADD:
                r = a + b
            elif c == OP_MUL:
                r = a * b
            elif b == 0.0:
                r = 1.0
            else:
                r = a / b
            stack[sp - 2] = r
            sp -= 1
    return stack[0], stack[1]


def evaluate_compiled(program: Program, params: Sequence[float]) -> tuple[float, float]:
    stack = np.empty(max(program.stack_size, 2))
    return run_program(program.codes, program.args, np.asarray(params, dtype=np.float64), stack)
