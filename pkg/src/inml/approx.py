"""Integer-only activation and loss approximations, plus float oracles.

The data-path functions (sigmoid_taylor, relu, leaky_relu, loss_*) operate
on raw Q-format ints and use nothing beyond add/multiply/shift/compare, so
they run unchanged on a pipeline restricted to those primitives.  The
float helpers (sigmoid_exact, sigmoid_poly, taylor_residual, bce_exact)
are reporting oracles only and never feed the packet path.

The logistic curve is approximated by its odd polynomial

    P(x) = 1/2 + x/4 - x**3/48 + x**5/1440

truncated to order 1, 3, or 5.  Inputs are clamped to |x| <= 2 before
evaluation (the polynomial leaves the curve outside that neighborhood) and
outputs are clamped back to [0, 1], the probability range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

from . import ops
from .fixedpoint import (
    I32_MAX,
    FixedPointFormat,
    QResult,
    encode,
    q_add,
    q_mul,
    q_neg,
    q_sub,
)

VALID_ORDERS = (1, 3, 5)

SIGMOID_CLAMP = 2.0  # default half-width of the trusted input interval

# Exact coefficients of the odd approximation polynomial, keyed by the
# power of x they multiply.
_SIGMOID_BIAS = Fraction(1, 2)
_SIGMOID_COEFFS = {1: Fraction(1, 4), 3: Fraction(-1, 48), 5: Fraction(1, 1440)}


def _check_order(order: int):
    if order not in VALID_ORDERS:
        raise ValueError(f"polynomial order must be one of {VALID_ORDERS}, got {order}")


@dataclass(frozen=True)
class Activation:
    """A layer's activation: linear, relu, leaky relu, or polynomial sigmoid.

    Parametric relu is leaky relu whose slope comes from a table entry
    instead of a constant, so it needs no separate kind.
    """

    kind: str
    alpha: float | None = None  # leaky slope, in (0, 1)
    order: int | None = None  # sigmoid polynomial order

    def __post_init__(self):
        if self.kind in ("linear", "relu"):
            if self.alpha is not None or self.order is not None:
                raise ValueError(f"{self.kind} activation takes no parameters")
        elif self.kind == "leaky":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError(f"leaky slope must be in (0, 1), got {self.alpha}")
            if self.order is not None:
                raise ValueError("leaky activation takes no polynomial order")
        elif self.kind == "sigmoid":
            if self.alpha is not None:
                raise ValueError("sigmoid activation takes no slope")
            if self.order is None:
                raise ValueError("sigmoid activation requires a polynomial order")
            _check_order(self.order)
        else:
            raise ValueError(f"unknown activation kind {self.kind!r}")

    @classmethod
    def linear(cls) -> "Activation":
        return cls("linear")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def leaky(cls, alpha: float) -> "Activation":
        return cls("leaky", alpha=alpha)

    @classmethod
    def sigmoid(cls, order: int) -> "Activation":
        return cls("sigmoid", order=order)

    def token(self) -> str:
        """Render as a model-file token: linear|relu|leaky:<a>|sigmoid:<n>."""
        if self.kind == "leaky":
            return f"leaky:{self.alpha!r}"
        if self.kind == "sigmoid":
            return f"sigmoid:{self.order}"
        return self.kind

    @classmethod
    def from_token(cls, token: str) -> "Activation":
        name, sep, arg = token.partition(":")
        if name == "linear" and not sep:
            return cls.linear()
        if name == "relu" and not sep:
            return cls.relu()
        if name == "leaky" and sep:
            try:
                alpha = float(arg)
            except ValueError:
                raise ValueError(f"bad leaky slope {arg!r}") from None
            return cls.leaky(alpha)
        if name == "sigmoid" and sep:
            if arg not in ("1", "3", "5"):
                raise ValueError(f"sigmoid order must be 1, 3 or 5, got {arg!r}")
            return cls.sigmoid(int(arg))
        raise ValueError(f"unknown activation {token!r}")


def sigmoid_constants(order: int, fmt: FixedPointFormat) -> list[int]:
    """Encoded polynomial constants [bias, c1, (c3, (c5))] for one order.

    These are the values a control plane would install in constant tables.
    """
    _check_order(order)
    fmt.require_no_offset()
    consts = [encode(float(_SIGMOID_BIAS), fmt).raw]
    for power in (1, 3, 5):
        if power > order:
            break
        consts.append(encode(float(_SIGMOID_COEFFS[power]), fmt).raw)
    return consts


class SigmoidResult(NamedTuple):
    raw: int
    saturated: bool
    clamped: bool


def sigmoid_taylor(
    x: int,
    order: int,
    fmt: FixedPointFormat,
    constants: list[int] | None = None,
    trace: list | None = None,
    clamp: float = SIGMOID_CLAMP,
) -> SigmoidResult:
    """Integer evaluation of the sigmoid polynomial at a raw input.

    Evaluation order is pinned so results are reproducible to the last
    bit: clamp the input to |x| <= clamp (default 2, past which the
    polynomial leaves the curve); square it once; fold constants in from
    the highest order down (Horner in x**2); multiply by x and add the
    bias; clamp the output to [0, 1].  Each intermediate goes through
    the same rounding rescale as any other fixed-point multiply.
    """
    _check_order(order)
    fmt.require_no_offset()
    if clamp <= 0:
        raise ValueError(f"clamp bound must be positive, got {clamp!r}")
    if constants is None:
        constants = sigmoid_constants(order, fmt)

    bound = min(round(clamp * fmt.one), I32_MAX)
    if trace is not None:
        trace.extend(ops.CLAMP_TAGS)
    xc = min(max(x, -bound), bound)
    clamped = xc != x

    saturated = False
    if order == 1:
        acc = constants[1]
    else:
        t = q_mul(xc, xc, fmt)
        saturated |= t.saturated
        if trace is not None:
            trace.extend(ops.QMUL_TAGS)
        acc = constants[-1]
        for c in constants[-2:0:-1]:
            step = q_mul(acc, t.raw, fmt)
            folded = q_add(c, step.raw)
            saturated |= step.saturated or folded.saturated
            if trace is not None:
                trace.extend(ops.QMUL_TAGS)
                trace.append(ops.ADD)
            acc = folded.raw

    slope = q_mul(acc, xc, fmt)
    result = q_add(constants[0], slope.raw)
    saturated |= slope.saturated or result.saturated
    if trace is not None:
        trace.extend(ops.QMUL_TAGS)
        trace.append(ops.ADD)
        trace.extend(ops.CLAMP_TAGS)

    out = min(max(result.raw, 0), fmt.one)
    clamped |= out != result.raw
    return SigmoidResult(out, saturated, clamped)


def relu(x: int, trace: list | None = None) -> int:
    """max(0, x) on the raw value."""
    if trace is not None:
        trace.append(ops.COMPARE)
        trace.append(ops.SELECT)
    return x if x > 0 else 0


def leaky_relu(
    x: int, alpha_q: int, fmt: FixedPointFormat, trace: list | None = None
) -> QResult:
    """x for positive inputs, alpha*x otherwise (alpha pre-encoded)."""
    if trace is not None:
        trace.append(ops.COMPARE)
    if x > 0:
        if trace is not None:
            trace.append(ops.SELECT)
        return QResult(x, False)
    if trace is not None:
        trace.extend(ops.QMUL_TAGS)
        trace.append(ops.SELECT)
    return q_mul(alpha_q, x, fmt)


def loss_mse(y: int, yhat: int, fmt: FixedPointFormat) -> QResult:
    """Squared error (y - yhat)**2 in fixed point."""
    fmt.require_no_offset()
    d = q_sub(y, yhat)
    sq = q_mul(d.raw, d.raw, fmt)
    return QResult(sq.raw, d.saturated or sq.saturated)


def _log1p_poly(yhat: int, sign: int, fmt: FixedPointFormat) -> QResult:
    # sign=+1: yhat - yhat^2/2 + yhat^3/3;  sign=-1: -yhat - yhat^2/2 - yhat^3/3
    half = encode(0.5, fmt).raw
    third = encode(1.0 / 3.0, fmt).raw
    h2 = q_mul(yhat, yhat, fmt)
    h3 = q_mul(h2.raw, yhat, fmt)
    half_h2 = q_mul(half, h2.raw, fmt)
    third_h3 = q_mul(third, h3.raw, fmt)
    saturated = h2.saturated or h3.saturated or half_h2.saturated or third_h3.saturated
    if sign > 0:
        a = q_sub(yhat, half_h2.raw)
        b = q_add(a.raw, third_h3.raw)
        return QResult(b.raw, saturated or a.saturated or b.saturated)
    a = q_add(yhat, half_h2.raw)
    s = q_add(a.raw, third_h3.raw)
    b = q_neg(s.raw)
    return QResult(b.raw, saturated or a.saturated or s.saturated or b.saturated)


def loss_bce_taylor(y: int, yhat: int, fmt: FixedPointFormat) -> QResult:
    """Binary cross-entropy via cubic log polynomials, in fixed point.

    Evaluates -y*(h - h^2/2 + h^3/3) - (1-y)*(-h - h^2/2 - h^3/3) with
    h = yhat, every power and product through the rounding rescale.
    Expects decode(y) in {0, 1} and decode(yhat) in [0, 1]; out-of-domain
    inputs produce out-of-domain losses rather than errors.
    """
    fmt.require_no_offset()
    pos = _log1p_poly(yhat, +1, fmt)
    neg = _log1p_poly(yhat, -1, fmt)
    one_minus_y = q_sub(fmt.one, y)
    t1 = q_mul(y, pos.raw, fmt)
    t0 = q_mul(one_minus_y.raw, neg.raw, fmt)
    total = q_add(t1.raw, t0.raw)
    out = q_neg(total.raw)
    saturated = (
        pos.saturated
        or neg.saturated
        or one_minus_y.saturated
        or t1.saturated
        or t0.saturated
        or total.saturated
        or out.saturated
    )
    return QResult(out.raw, saturated)


def loss_cce_taylor(y: list[int], yhat: list[int], fmt: FixedPointFormat) -> QResult:
    """Categorical cross-entropy: -sum_i y_i * (h_i - h_i^2/2 + h_i^3/3)."""
    fmt.require_no_offset()
    if len(y) != len(yhat):
        raise ValueError(f"length mismatch: {len(y)} labels vs {len(yhat)} predictions")
    acc = 0
    saturated = False
    for yi, hi in zip(y, yhat):
        pos = _log1p_poly(hi, +1, fmt)
        term = q_mul(yi, pos.raw, fmt)
        summed = q_add(acc, term.raw)
        saturated |= pos.saturated or term.saturated or summed.saturated
        acc = summed.raw
    out = q_neg(acc)
    return QResult(out.raw, saturated or out.saturated)


# ---------------------------------------------------------------------------
# Float oracles (reporting only; never on the packet path)


def sigmoid_exact(x: float) -> float:
    """Numerically stable logistic function 1 / (1 + e**-x)."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sigmoid_poly(x: float, order: int) -> float:
    """The order-n approximation polynomial, evaluated in floats."""
    _check_order(order)
    acc = 0.5 + x / 4.0
    if order >= 3:
        acc -= x**3 / 48.0
    if order >= 5:
        acc += x**5 / 1440.0
    return acc


def taylor_residual(x: float, order: int) -> float:
    """Gap sigmoid_exact(x) - sigmoid_poly(x, order) at one point."""
    if not math.isfinite(x):
        raise ValueError(f"residual requires finite x, got {x!r}")
    return sigmoid_exact(x) - sigmoid_poly(x, order)


def bce_exact(y: float, yhat: float) -> float:
    """True binary cross-entropy -[y*log(h) + (1-y)*log(1-h)].

    Comparison oracle for the polynomial loss; raises ValueError outside
    the open interval (0, 1) where the logs are defined.
    """
    if not 0.0 < yhat < 1.0:
        raise ValueError(f"prediction must lie in (0, 1), got {yhat!r}")
    return -(y * math.log(yhat) + (1.0 - y) * math.log(1.0 - yhat))
