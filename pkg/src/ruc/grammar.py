"""Feature-expression language.

Programs are trees of :class:`Leaf` (an input variable) and :class:`Node`
(an operator applied to series arguments followed by integer windows). The
text form is prefix notation, e.g. ``ts_rank(mul(x,y),63)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

from .errors import (ArityError, DepthError, ExpressionSyntaxError, UnknownOperator,
                     UnknownVariable, WindowError)

FAMILIES = ("arithmetic", "statistical", "cross_sectional", "rolling")
DEFAULT_WINDOWS = (5, 10, 21, 63)
DEFAULT_MAX_DEPTH = 4


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    family: str
    series_arity: int
    window_params: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.series_arity not in (1, 2):
            raise ValueError("series_arity must be 1 or 2")
        if self.window_params not in (0, 1, 2):
            raise ValueError("window_params must be 0, 1 or 2")
        windowed = self.family in ("statistical", "rolling")
        if windowed != (self.window_params >= 1):
            raise ValueError(f"{self.name}: family {self.family} and window_params disagree")

    @property
    def signature(self):
        return (self.series_arity, self.window_params)


def _op(name, family, arity, windows=0):
    return OperatorSpec(name, family, arity, windows)


OPERATORS = (
    _op("add", "arithmetic", 2),
    _op("sub", "arithmetic", 2),
    _op("mul", "arithmetic", 2),
    _op("div", "arithmetic", 2),
    _op("neg", "arithmetic", 1),
    _op("abs_", "arithmetic", 1),
    _op("log_", "arithmetic", 1),
    _op("sign", "arithmetic", 1),
    _op("ts_mean", "statistical", 1, 1),
    _op("ts_std", "statistical", 1, 1),
    _op("ts_skew", "statistical", 1, 1),
    _op("ts_min", "statistical", 1, 1),
    _op("ts_max", "statistical", 1, 1),
    _op("ts_median", "statistical", 1, 1),
    _op("ts_sum", "statistical", 1, 1),
    _op("ts_rank", "rolling", 1, 1),
    _op("ts_zscore", "rolling", 1, 1),
    _op("ts_ir", "rolling", 1, 1),
    _op("ts_arg_max", "rolling", 1, 1),
    _op("ts_arg_min", "rolling", 1, 1),
    _op("ts_quantile", "rolling", 1, 1),
    _op("ts_delta", "rolling", 1, 1),
    _op("ts_decay_linear", "rolling", 1, 1),
    _op("ts_mean_diff", "rolling", 1, 2),
    _op("ts_corr", "rolling", 2, 1),
    _op("ts_cov", "rolling", 2, 1),
    _op("ts_regression", "rolling", 2, 1),
    _op("cs_rank", "cross_sectional", 1),
    _op("cs_zscore", "cross_sectional", 1),
    _op("cs_demean", "cross_sectional", 1),
)


@dataclass(frozen=True)
class Leaf:
    variable: str

    def __str__(self):
        return self.variable


@dataclass(frozen=True)
class Node:
    op: OperatorSpec
    children: tuple
    windows: tuple = ()

    def __str__(self):
        return print_program(self)


FeatureProgram = Union[Leaf, Node]


@dataclass(frozen=True)
class Grammar:
    operators: tuple
    variables: tuple
    windows: tuple = DEFAULT_WINDOWS
    max_depth: int = DEFAULT_MAX_DEPTH
    _by_name: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "windows", tuple(sorted(set(int(w) for w in self.windows))))
        if not self.operators:
            raise ValueError("grammar needs at least one operator")
        if not self.variables:
            raise ValueError("grammar needs at least one variable")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if any(w < 2 for w in self.windows):
            raise ValueError("windows must be >= 2")
        if any(op.window_params for op in self.operators) and not self.windows:
            raise ValueError("windowed operators need a non-empty window set")
        for op in self.operators:
            if op.name in self._by_name:
                raise ValueError(f"duplicate operator {op.name!r}")
            self._by_name[op.name] = op

    @classmethod
    def default(cls, variables, windows=DEFAULT_WINDOWS, max_depth=DEFAULT_MAX_DEPTH,
                families=None, exclude=()):
        ops = [op for op in OPERATORS
               if (families is None or op.family in families) and op.name not in exclude]
        return cls(tuple(ops), tuple(variables), tuple(windows), max_depth)

    def operator(self, name: str) -> OperatorSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownOperator(name) from None

    def validate(self, program: FeatureProgram) -> FeatureProgram:
        """Raise the matching grammar error if ``program`` is not valid here."""
        for _, node in walk(program):
            if isinstance(node, Leaf):
                if node.variable not in self.variables:
                    raise UnknownVariable(node.variable)
                continue
            if self._by_name.get(node.op.name) != node.op:
                raise UnknownOperator(node.op.name)
            if len(node.children) != node.op.series_arity or \
                    len(node.windows) != node.op.window_params:
                raise ArityError(f"{node.op.name} expects {node.op.series_arity} series and "
                                 f"{node.op.window_params} windows")
            for w in node.windows:
                if w not in self.windows:
                    raise WindowError(f"window {w} not in allowed set {self.windows}")
        d = depth(program)
        if d > self.max_depth:
            raise DepthError(f"depth {d} exceeds max_depth {self.max_depth}")
        return program


def depth(program: FeatureProgram) -> int:
    if isinstance(program, Leaf):
        return 0
    return 1 + max(depth(c) for c in program.children)


def print_program(program: FeatureProgram) -> str:
    if isinstance(program, Leaf):
        return program.variable
    args = [print_program(c) for c in program.children]
    args += [str(int(w)) for w in program.windows]
    return f"{program.op.name}({','.join(args)})"


def walk(program: FeatureProgram, path=()) -> Iterator[tuple]:
    """Yield ``(path, node)`` in pre-order; a path is a tuple of child indices."""
    yield path, program
    if isinstance(program, Node):
        for i, child in enumerate(program.children):
            yield from walk(child, path + (i,))


def replace_at(program: FeatureProgram, path, new) -> FeatureProgram:
    if not path:
        return new
    children = list(program.children)
    children[path[0]] = replace_at(children[path[0]], path[1:], new)
    return Node(program.op, tuple(children), program.windows)


def leaves(program: FeatureProgram) -> Iterable[str]:
    return [n.variable for _, n in walk(program) if isinstance(n, Leaf)]


# -- parser -------------------------------------------------------------------

def _is_ident_start(ch):
    return ch.isascii() and (ch.isalpha() or ch == "_")


def _is_ident_char(ch):
    return ch.isascii() and (ch.isalnum() or ch in "_.")


def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "(),":
            tokens.append((ch, ch, i))
            i += 1
        elif _is_ident_start(ch):
            j = i + 1
            while j < n and _is_ident_char(text[j]):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
        elif ch.isascii() and ch.isdigit():
            j = i + 1
            while j < n and text[j].isascii() and text[j].isdigit():
                j += 1
            tokens.append(("int", text[i:j], i))
            i = j
        else:
            raise ExpressionSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text, grammar):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.grammar = grammar

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind):
        tok = self.tokens[self.pos]
        if tok[0] != kind:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ExpressionSyntaxError(f"expected {kind!r}, found {found}", tok[2])
        self.pos += 1
        return tok

    def expr(self, level):
        kind, value, offset = self.peek()
        if kind != "ident":
            found = "end of input" if kind == "end" else repr(value)
            raise ExpressionSyntaxError(f"expected an expression, found {found}", offset)
        self.pos += 1
        if self.peek()[0] != "(":
            if value not in self.grammar.variables:
                raise UnknownVariable(value)
            return Leaf(value)
        op = self.grammar.operator(value)
        if level >= self.grammar.max_depth:
            raise DepthError(f"nesting exceeds max_depth {self.grammar.max_depth} at offset {offset}")
        self.take("(")
        children, windows = [], []
        while True:
            tok = self.peek()
            if tok[0] == "int":
                self.pos += 1
                windows.append((int(tok[1]), tok[2]))
            else:
                if windows:
                    raise ExpressionSyntaxError("series argument after a window argument", tok[2])
                children.append(self.expr(level + 1))
            if self.peek()[0] == ",":
                self.pos += 1
                continue
            self.take(")")
            break
        if len(children) != op.series_arity or len(windows) != op.window_params:
            raise ArityError(f"{op.name} expects {op.series_arity} series and "
                             f"{op.window_params} window arguments, got "
                             f"{len(children)} and {len(windows)}")
        for w, off in windows:
            if w < 2 or w not in self.grammar.windows:
                raise WindowError(f"window {w} at offset {off} not in allowed set "
                                  f"{self.grammar.windows}")
        return Node(op, tuple(children), tuple(w for w, _ in windows))


def parse(text: str, grammar: Grammar) -> FeatureProgram:
    """Parse expression text into a program validated against ``grammar``."""
    parser = _Parser(text, grammar)
    program = parser.expr(0)
    parser.take("end")
    return program
