"""
Baseline hazard expressions over ``t``.

Grammar: numeric constants, ``pi`` and ``e``, the operators + - * / and
``**`` (``^`` accepted as power), and the functions exp, log, sin, cos, sqrt.
Expressions are parsed once with ``ast`` and rejected unless every node is in
that whitelist, then evaluated with numpy so they vectorise over ``t``.
"""

import ast
import logging
import math

import numpy as np

from app.models.errors import ConfigError
from app.models.models import BaselineMode
from app.schema.schema import BaselineSpec

logger = logging.getLogger("frailty.expression")

FUNCTIONS = {"exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt}
CONSTANTS = {"pi": math.pi, "e": math.e}
ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)

# Weibull-type baseline (c = 0.01, d = 4.6) in its three forms and the oscillating hazard
PRESETS = {
    "weibull-hazard": (BaselineMode.hazard, "4.6*(0.01*t)**4.6/t"),
    "weibull-cumulative": (BaselineMode.cumulative, "(0.01*t)**4.6"),
    "weibull-inverse": (BaselineMode.inverse_cumulative, "t**(1/4.6)/0.01"),
    "oscillating-hazard": (BaselineMode.hazard, "2**sin(0.1*pi*t)*4.6*(0.01*t)**4.6/t"),
}


class BaselineExpression:
    """Callable compiled from a whitelisted expression; pickles by source."""

    def __init__(self, source: str):
        self.source = source.strip()
        self._code = compile(validate_expression(self.source), "<baseline>", "eval")

    def _eval(self, t):
        return eval(self._code, {"__builtins__": {}}, {"t": t, **FUNCTIONS, **CONSTANTS})

    def __call__(self, t):
        if np.ndim(t) == 0:
            # plain floats keep scalar calls from quadrature and root finding cheap
            try:
                return float(self._eval(float(t)))
            except (ZeroDivisionError, OverflowError, ValueError, TypeError):
                pass
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = self._eval(np.asarray(t, dtype=float))
        return out if np.ndim(out) else float(out)

    def __reduce__(self):
        return (BaselineExpression, (self.source,))

    def __repr__(self):
        return f"BaselineExpression({self.source!r})"


def validate_expression(source: str) -> ast.Expression:
    try:
        tree = ast.parse(source.replace("^", "**"), mode="eval")
    except SyntaxError as e:
        raise ConfigError(f"cannot parse baseline expression '{source}': {e.msg}")
    for node in ast.walk(tree):
        if not isinstance(node, ALLOWED_NODES):
            raise ConfigError(f"'{type(node).__name__}' is not allowed in baseline expression '{source}'")
        if isinstance(node, ast.Name) and node.id not in FUNCTIONS and node.id not in CONSTANTS and node.id != "t":
            raise ConfigError(f"unknown name '{node.id}' in baseline expression '{source}'")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or len(node.args) != 1 or node.keywords:
                raise ConfigError(f"only exp, log, sin, cos and sqrt of one argument are allowed in '{source}'")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"only numeric constants are allowed in '{source}'")
    return tree


def build_baseline(mode: BaselineMode, source: str) -> BaselineSpec:
    fn = BaselineExpression(source)
    return BaselineSpec(**{mode.value: fn}, label=fn.source)


def preset_baseline(name: str) -> BaselineSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown baseline preset '{name}' (choose from {', '.join(PRESETS)})")
    mode, source = PRESETS[name]
    return build_baseline(mode, source)
