"""
Arithmetic expressions in x and y for user-defined initial data.

The grammar is documented in docs/expression_grammar.md. Expressions are parsed into sympy, so
gradients are exact derivatives; both the field and its gradient are lambdified to numpy.
Comparisons evaluate to +1 where true and -1 elsewhere, so `0.95 * (x < 0.5)` is a two-phase datum.
"""

from dataclasses import dataclass
from tokenize import ENDMARKER, NAME, NEWLINE, NL, OP
from typing import Callable, Dict, List, Tuple

import numpy as np
import sympy as sm
from sympy.core.relational import Relational
from sympy.parsing.sympy_parser import auto_number, convert_xor, parse_expr

from chvem.errors import ExpressionError

X, Y = sm.symbols("x y", real=True)

FUNCTIONS = {
    "cos": sm.cos,
    "sin": sm.sin,
    "exp": sm.exp,
    "abs": sm.Abs,
    "sqrt": sm.sqrt,
    "tanh": sm.tanh,
}
NON_SMOOTH = (sm.Abs, sm.Piecewise)

Token = Tuple[int, str]


def phase(value):
    """Comparison -> +1 / -1; anything else passes through."""
    if value is sm.true:
        return sm.Integer(1)
    if value is sm.false:
        return sm.Integer(-1)
    if isinstance(value, Relational):
        return sm.Piecewise((1, value), (-1, True))
    return value


def wrap_comparisons(tokens: List[Token], local_dict: Dict, global_dict: Dict) -> List[Token]:
    """Route every parenthesised group and the whole input through `phase`."""
    body = list(tokens)
    tail: List[Token] = []
    while body and body[-1][0] in (NEWLINE, NL, ENDMARKER):
        tail.insert(0, body.pop())
    result: List[Token] = [(NAME, "phase"), (OP, "(")]
    for toknum, tokval in body:
        if toknum == OP and tokval == "(":
            result.extend([(OP, "("), (NAME, "phase"), (OP, "(")])
        elif toknum == OP and tokval == ")":
            result.extend([(OP, ")"), (OP, ")")])
        else:
            result.append((toknum, tokval))
    result.append((OP, ")"))
    return result + tail


TRANSFORMATIONS = (wrap_comparisons, auto_number, convert_xor)


def _namespace() -> Tuple[Dict, Dict]:
    local_dict = {"x": X, "y": Y, "pi": sm.pi, **FUNCTIONS}
    global_dict = {
        "__builtins__": {},
        "Integer": sm.Integer,
        "Float": sm.Float,
        "Rational": sm.Rational,
        "phase": phase,
    }
    return local_dict, global_dict


def parse(text: str) -> sm.Expr:
    if not text or not text.strip():
        raise ExpressionError("Empty expression")
    local_dict, global_dict = _namespace()
    try:
        expr = parse_expr(text, local_dict=local_dict, global_dict=global_dict, transformations=TRANSFORMATIONS)
    except Exception as e:
        raise ExpressionError(f"Invalid expression '{text}': {e}") from e
    if not isinstance(expr, sm.Expr):
        raise ExpressionError(f"Expression '{text}' does not evaluate to a number")
    return expr


def _lambdify(expr: sm.Expr) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    return sm.lambdify((X, Y), expr, modules="numpy")


@dataclass(frozen=True)
class Expression:
    source: str
    expr: sm.Expr
    smooth: bool
    _values: Callable
    _dx: Callable
    _dy: Callable

    def _evaluate(self, func: Callable, x, y, what: str) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        with np.errstate(all="ignore"):
            values = np.broadcast_to(np.asarray(func(x, y), dtype=float), x.shape).copy()
        if not np.all(np.isfinite(values)):
            raise ExpressionError(f"{what} of '{self.source}' is not finite at every evaluation point")
        return values

    def __call__(self, x, y) -> np.ndarray:
        return self._evaluate(self._values, x, y, "Expression")

    def gradient(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        return self._evaluate(self._dx, x, y, "x-derivative"), self._evaluate(self._dy, x, y, "y-derivative")


def compile_expression(text: str) -> Expression:
    expr = parse(text)
    smooth = not expr.has(*NON_SMOOTH)
    dx, dy = (sm.diff(expr, s) for s in (X, Y)) if smooth else (sm.Integer(0), sm.Integer(0))
    return Expression(
        source=text,
        expr=expr,
        smooth=smooth,
        _values=_lambdify(expr),
        _dx=_lambdify(dx),
        _dy=_lambdify(dy),
    )
