"""Sample programs: a tiny language for weighted sums of losses over point expressions.

Grammar (EBNF)::

    Program   := Term ('+' Term)*
    Term      := [Number '*'] Loss '(' PointExpr (',' Arg)* ')'
    Loss      := 'bn' | 'spec' | 'pcf' | 'aniso' | 'disc' | 'task'
    PointExpr := 's'
               | 'proj' '(' DimList ',' PointExpr ')'
               | 'prog' '(' PointExpr ')'
               | 'grid' '(' DimList ',' PointExpr ')'
    DimList   := Int (',' Int)*

``Arg`` is a bare word (no whitespace, commas, parentheses, ``+`` or ``*``)
or a double-quoted string with JSON escapes. ``discrepancy`` is accepted as
an alias of ``disc``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import losses as L
from .errors import ConfigError, ParseError, UsageError
from .samplers import PointSet, make_rng

LOSS_ARITY = {"bn": 0, "spec": 1, "pcf": 1, "aniso": 0, "disc": 0, "task": 1}
LOSS_ALIASES = {"discrepancy": "disc"}
OPERATORS = ("proj", "prog", "grid")


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Var:
    name: str = "s"


@dataclass(frozen=True)
class Proj:
    dims: tuple
    expr: "PointExpr"


@dataclass(frozen=True)
class Prog:
    expr: "PointExpr"


@dataclass(frozen=True)
class Grid:
    dims: tuple
    expr: "PointExpr"


PointExpr = Union[Var, Proj, Prog, Grid]


@dataclass(frozen=True)
class Term:
    loss: str
    expr: PointExpr
    args: tuple = ()
    weight: float = 1.0


@dataclass(frozen=True)
class Program:
    terms: tuple

    def __str__(self):
        return format_program(self)


# ---------------------------------------------------------------------------
# lexer

@dataclass(frozen=True)
class Token:
    kind: str  # number, word, string, punct, eof
    text: str
    line: int
    column: int


_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_WORD = re.compile(r"[^\s,()+*\"]+")
_STRING = re.compile(r'"(?:[^"\\\n]|\\.)*"')
_PUNCT = "(),+*"
_DELIMS = set(_PUNCT) | {'"'}


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        ch = text[pos]
        col = pos - line_start + 1
        if ch == "\n":
            line, line_start, pos = line + 1, pos + 1, pos + 1
            continue
        if ch.isspace():
            pos += 1
            continue
        if ch in _PUNCT:
            tokens.append(Token("punct", ch, line, col))
            pos += 1
            continue
        if ch == '"':
            m = _STRING.match(text, pos)
            if not m:
                raise ParseError("unterminated string", line, col)
            tokens.append(Token("string", json.loads(m.group()), line, col))
            pos = m.end()
            continue
        m = _NUMBER.match(text, pos)
        if m and (m.end() == len(text) or text[m.end()].isspace() or text[m.end()] in _DELIMS):
            tokens.append(Token("number", m.group(), line, col))
            pos = m.end()
            continue
        m = _WORD.match(text, pos)
        tokens.append(Token("word", m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, len(text) - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, text: str, dim: int | None):
        self.tokens = tokenize(text)
        self.pos = 0
        self.n_dims = dim

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise ParseError(message, tok.line, tok.column)

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != text:
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            self.fail(f"expected '{text}', found {found}")
        return self.advance()

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.text == text

    def program(self) -> Program:
        terms = [self.term()]
        while self.at("+"):
            self.advance()
            terms.append(self.term())
        if self.peek().kind != "eof":
            self.fail(f"unexpected trailing {self.peek().text!r}")
        return Program(tuple(terms))

    def term(self) -> Term:
        weight = 1.0
        if self.peek().kind == "number":
            tok = self.advance()
            weight = float(tok.text)
            if not math.isfinite(weight):
                self.fail("term weight must be finite", tok)
            self.expect("*")
        tok = self.advance()
        if tok.kind != "word":
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            self.fail(f"expected a loss name, found {found}", tok)
        name = LOSS_ALIASES.get(tok.text, tok.text)
        if name not in LOSS_ARITY:
            self.fail(f"unknown loss {tok.text!r}; expected one of {', '.join(LOSS_ARITY)}", tok)
        self.expect("(")
        expr = self.point_expr()
        args = []
        while self.at(","):
            self.advance()
            arg = self.advance()
            if arg.kind not in ("word", "string", "number"):
                self.fail("expected an argument", arg)
            args.append((arg.text, arg))
        if len(args) != LOSS_ARITY[name]:
            where = args[LOSS_ARITY[name]][1] if len(args) > LOSS_ARITY[name] else tok
            self.fail(f"{name} takes {LOSS_ARITY[name]} argument(s), got {len(args)}", where)
        self.expect(")")
        return Term(name, expr, tuple(a for a, _ in args), weight)

    def point_expr(self) -> PointExpr:
        tok = self.advance()
        if tok.kind == "word" and tok.text == "s":
            return Var()
        if tok.kind == "word" and tok.text in OPERATORS:
            self.expect("(")
            if tok.text == "prog":
                inner = self.point_expr()
                self.expect(")")
                return Prog(inner)
            dims = self.dim_list()
            self.expect(",")
            inner = self.point_expr()
            self.expect(")")
            return Proj(dims, inner) if tok.text == "proj" else Grid(dims, inner)
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        self.fail(f"expected a point expression ('s', proj, prog or grid), found {found}", tok)

    def dim_index(self):
        tok = self.advance()
        if tok.kind != "number" or not re.fullmatch(r"\d+", tok.text):
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            self.fail(f"expected a dimension index, found {found}", tok)
        d = int(tok.text)
        if self.n_dims is not None and d >= self.n_dims:
            self.fail(f"dimension {d} out of range for {self.n_dims}D points", tok)
        return d, tok

    def dim_list(self) -> tuple:
        first = self.dim_index()
        dims = [first]
        while self.at(",") and self.peek(1).kind == "number":
            self.advance()
            dims.append(self.dim_index())
        seen = set()
        for d, tok in dims:
            if d in seen:
                self.fail(f"dimension {d} listed twice", tok)
            seen.add(d)
        return tuple(d for d, _ in dims)


def parse(text: str, dim: int | None = None) -> Program:
    """Parse program text; with ``dim`` given, dimension indices are range-checked."""
    return _Parser(text, dim).program()


# ---------------------------------------------------------------------------
# printer

_BARE_ARG = re.compile(r"[^\s,()+*\"]+")


def _format_arg(arg: str) -> str:
    if _BARE_ARG.fullmatch(arg) and not _NUMBER.fullmatch(arg):
        return arg
    return json.dumps(arg)


def _format_weight(w: float) -> str:
    text = repr(float(w))
    return text[:-2] if text.endswith(".0") else text


def format_expr(expr: PointExpr) -> str:
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Prog):
        return f"prog({format_expr(expr.expr)})"
    name = "proj" if isinstance(expr, Proj) else "grid"
    return f"{name}({', '.join(map(str, expr.dims))}, {format_expr(expr.expr)})"


def format_term(term: Term) -> str:
    inner = ", ".join([format_expr(term.expr)] + [_format_arg(a) for a in term.args])
    prefix = "" if term.weight == 1.0 else _format_weight(term.weight) + "*"
    return f"{prefix}{term.loss}({inner})"


def format_program(program: Program) -> str:
    return " + ".join(format_term(t) for t in program.terms)


# ---------------------------------------------------------------------------
# operators

def project(points: PointSet, dims) -> PointSet:
    dims = [int(d) for d in dims]
    if not dims or len(set(dims)) != len(dims):
        raise UsageError(f"projection dims must be distinct and non-empty, got {dims}")
    if any(d < 0 or d >= points.dim for d in dims):
        raise UsageError(f"projection dims {dims} out of range for {points.dim}D points")
    return PointSet(points.coords[:, dims], points.free_dims[dims])


def progressive_ranges(N: int, seed) -> list[tuple[int, int]]:
    """Half-open index ranges: everything, both halves, and one random power-of-two window."""
    if N < 2:
        raise UsageError("progressive ranges need N >= 2")
    rng = make_rng(*np.atleast_1d(seed).tolist())
    half = N // 2
    shortest = max(1, math.ceil(N / 8))
    lengths = [1 << e for e in range(N.bit_length()) if shortest <= (1 << e) <= N]
    length = lengths[int(rng.integers(len(lengths)))]
    start = int(rng.integers(N - length + 1))
    return [(0, N), (0, half), (half, N), (start, start + length)]


def fixed_dims(program: Program) -> tuple:
    """Dimensions held fixed by any ``grid`` operator in the program."""
    out = set()

    def visit(e):
        if isinstance(e, Grid):
            out.update(e.dims)
        if not isinstance(e, Var):
            visit(e.expr)

    for t in program.terms:
        visit(t.expr)
    return tuple(sorted(out))


def max_dim_used(program: Program) -> int:
    """Largest dimension index referenced at top level (``-1`` if none)."""
    best = -1

    def visit(e):
        nonlocal best
        if isinstance(e, (Proj, Grid)):
            best = max(best, max(e.dims))
        if not isinstance(e, Var):
            visit(e.expr)

    for t in program.terms:
        visit(t.expr)
    return best


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class LossContext:
    """Random draws and loaded resources shared by all terms within one step.

    ``targets`` maps program arguments to preloaded objects; unregistered
    arguments are read from disk on first use.
    """

    seed: tuple = (0,)
    K: int | None = None
    task_count: int = 64
    task_widths: tuple = (0.05, 0.25)
    targets: dict = field(default_factory=dict)
    _tasks: dict = field(default_factory=dict, repr=False)
    _ranges: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.seed = tuple(int(s) for s in np.atleast_1d(self.seed))

    def tasks(self, n: int) -> list:
        if n not in self._tasks:
            seed = int(np.random.SeedSequence(list(self.seed) + [1, n]).generate_state(1)[0])
            self._tasks[n] = L.sample_gaussian_tasks(self.task_count, n, seed, self.task_widths)
        return self._tasks[n]

    def ranges(self, N: int) -> list:
        if N not in self._ranges:
            self._ranges[N] = progressive_ranges(N, list(self.seed) + [2, N])
        return self._ranges[N]

    def resource(self, arg: str, kind):
        if arg not in self.targets:
            from . import io
            if kind is L.ImageTask:
                from pathlib import Path
                if not Path(arg).exists():
                    raise ConfigError(f"image file not found: {arg}")
                self.targets[arg] = io.read_image_task(arg)
            else:
                self.targets[arg] = io.load_target(arg)
        obj = self.targets[arg]
        if not isinstance(obj, kind):
            raise ConfigError(f"{arg!r} is a {type(obj).__name__}, expected {kind.__name__}")
        return obj


def _views(expr, batch, ctx):
    """Expand a point expression into weighted views ``(sub_batch, weight, scatter)``.

    ``scatter`` maps gradients of the view back to the full batch.
    """
    if isinstance(expr, Var):
        return [(batch, 1.0, lambda grads: grads)]
    out = []
    for sub, w, scatter in _views(expr.expr, batch, ctx):
        N, n = sub[0].shape
        if isinstance(expr, Grid):
            if any(d >= n for d in expr.dims):
                raise UsageError(f"grid dims {expr.dims} out of range for {n}D points")
            out.append((sub, w, scatter))
        elif isinstance(expr, Proj):
            dims = list(expr.dims)
            if any(d >= n for d in dims):
                raise UsageError(f"projection dims {expr.dims} out of range for {n}D points")

            def back(grads, dims=dims, n=n, N=N, scatter=scatter):
                full = [np.zeros((N, n)) for _ in grads]
                for F, g in zip(full, grads):
                    F[:, dims] = g
                return scatter(full)

            out.append(([X[:, dims] for X in sub], w, back))
        else:
            ranges = ctx.ranges(N)
            for lo, hi in ranges:
                def back(grads, lo=lo, hi=hi, n=n, N=N, scatter=scatter):
                    full = [np.zeros((N, n)) for _ in grads]
                    for F, g in zip(full, grads):
                        F[lo:hi] = g
                    return scatter(full)

                out.append(([X[lo:hi] for X in sub], w / len(ranges), back))
    return out


def _term_loss(term: Term, batch, ctx: LossContext, grad: bool):
    name = term.loss
    if name == "bn":
        return L.spectral_loss(batch, L.TargetSpectrum.builtin("bn"), ctx.K, grad)
    if name == "spec":
        return L.spectral_loss(batch, ctx.resource(term.args[0], L.TargetSpectrum), ctx.K, grad)
    if name == "aniso":
        return L.anisotropy_loss(batch, ctx.K, None, grad)
    if name == "pcf":
        return L.differential_loss(batch, ctx.resource(term.args[0], L.PcfHistogram), grad)
    if name == "disc":
        return L.discrepancy_loss(batch, ctx.tasks(batch[0].shape[1]), grad)
    if name == "task":
        return L.task_integral_loss(batch, ctx.resource(term.args[0], L.ImageTask), grad)
    raise UsageError(f"unknown loss {name!r}")


def evaluate_term(term: Term, batch, ctx: LossContext, grad: bool = False):
    batch = [np.asarray(X, dtype=float) for X in batch]
    value = 0.0
    grads = [np.zeros_like(X) for X in batch] if grad else None
    for sub, w, scatter in _views(term.expr, batch, ctx):
        if grad:
            v, g = _term_loss(term, sub, ctx, True)
            for G, s in zip(grads, scatter(g)):
                G += (term.weight * w) * s
        else:
            v = _term_loss(term, sub, ctx, False)
        value += term.weight * w * v
    return (value, grads) if grad else value


def evaluate_program(program: Program, batch, ctx: LossContext, grad: bool = False):
    """Weighted sum of term losses on ``batch`` (a list of ``(N, n)`` arrays or PointSets).

    With ``grad=True`` also returns per-item coordinate gradients.
    """
    batch = [X.coords if isinstance(X, PointSet) else np.asarray(X, dtype=float) for X in batch]
    if not batch:
        raise UsageError("empty batch")
    value = 0.0
    grads = [np.zeros_like(X) for X in batch] if grad else None
    for term in program.terms:
        if grad:
            v, g = evaluate_term(term, batch, ctx, True)
            for G, s in zip(grads, g):
                G += s
        else:
            v = evaluate_term(term, batch, ctx)
        value += v
    return (value, grads) if grad else value
