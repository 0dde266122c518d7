"""Reverse-mode automatic differentiation over numpy float64 arrays.

A Tape records array-valued operations as they execute; backpropagation
walks the node list in reverse creation order, which fixes the reduction
tree and makes repeated evaluations bit-identical. Every loss in the
package (rendering, warping, feature terms) is differentiated through
this single engine, and every gradient can be cross-checked against
central finite differences with `finite_difference_check`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np


class NonFiniteLoss(Exception):
    """Raised when a forward pass produces NaN/Inf, naming the first bad node."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node on the tape: a numpy value plus links to its parents.

    Arithmetic operators mirror numpy semantics (including broadcasting),
    so code written against Var also runs on plain arrays.
    """

    __slots__ = ("tape", "value", "parents", "vjps", "op", "index")

    # Make numpy defer all mixed arithmetic to Var's reflected operators.
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", value: np.ndarray, parents: tuple, vjps: tuple, op: str):
        self.tape = tape
        self.value = _as_array(value)
        self.parents = parents
        self.vjps = vjps
        self.op = op
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis=axis, keepdims=keepdims)

    def item(self) -> float:
        return float(self.value)


class Tape:
    """Ordered record of one forward pass plus a named-parameter registry."""

    def __init__(self):
        self.nodes: List[Var] = []
        self.params: Dict[str, Var] = {}

    def param(self, name: str, value: np.ndarray) -> Var:
        if name in self.params:
            raise ValueError(f"parameter block {name!r} registered twice")
        v = Var(self, _as_array(value).copy(), (), (), f"param:{name}")
        self.params[name] = v
        return v

    def constant(self, value) -> np.ndarray:
        # Constants never enter the tape; they stay plain arrays.
        return _as_array(value)

    def backward(self, loss: Var) -> Dict[str, np.ndarray]:
        """Gradients of a scalar `loss` w.r.t. every registered parameter block."""
        if loss.value.shape != ():
            raise ValueError("backward expects a scalar loss")
        grads: Dict[int, np.ndarray] = {loss.index: np.asarray(1.0)}
        param_grads: Dict[int, np.ndarray] = {}
        param_indices = {p.index for p in self.params.values()}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            if node.index in param_indices:
                param_grads[node.index] = g
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                acc = grads.get(parent.index)
                if acc is None:
                    grads[parent.index] = contrib
                else:
                    grads[parent.index] = acc + contrib
        out: Dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            g = param_grads.get(p.index)
            if g is None:
                g = np.zeros_like(p.value)
            out[name] = np.asarray(g, dtype=np.float64).reshape(p.value.shape)
        return out

    def first_nonfinite_node(self) -> Optional[Var]:
        for node in self.nodes:
            if not np.all(np.isfinite(node.value)):
                return node
        return None


# ---------------------------------------------------------------------------
# op constructors
# ---------------------------------------------------------------------------

def _tape_of(*args) -> Optional[Tape]:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else _as_array(x)


def custom(value, parents_and_vjps: Sequence[Tuple["Var", Callable]], op: str = "custom") -> "Var":
    """Build a node from a precomputed value and explicit (parent, vjp) pairs.

    The hook other modules use for fused operations (grid interpolation,
    image sampling) whose forward/backward are cheaper hand-written.
    """
    parents = tuple(p for p, _ in parents_and_vjps)
    vjps = tuple(f for _, f in parents_and_vjps)
    if not parents:
        raise ValueError("custom op needs at least one Var parent")
    return Var(parents[0].tape, value, parents, vjps, op)


def _binary(a, b, fwd, vjp_a, vjp_b, op):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = fwd(av, bv)
    if tape is None:
        return out
    parents = []
    if isinstance(a, Var):
        parents.append((a, lambda g: _unbroadcast(vjp_a(g, av, bv), av.shape)))
    if isinstance(b, Var):
        parents.append((b, lambda g: _unbroadcast(vjp_b(g, av, bv), bv.shape)))
    return custom(out, parents, op)


def _unary(a, fwd, vjp, op):
    if not isinstance(a, Var):
        return fwd(_as_array(a))
    av = a.value
    out = fwd(av)
    return custom(out, [(a, lambda g: vjp(g, av, out))], op)


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b):
    return _binary(a, b, np.divide,
                   lambda g, x, y: g / y,
                   lambda g, x, y: -g * x / (y * y), "div")


def neg(a):
    return _unary(a, np.negative, lambda g, x, o: -g, "neg")


def power(a, p: float):
    p = float(p)
    return _unary(a, lambda x: np.power(x, p), lambda g, x, o: g * p * np.power(x, p - 1.0), "pow")


def vexp(a):
    return _unary(a, np.exp, lambda g, x, o: g * o, "exp")


def vlog(a):
    return _unary(a, np.log, lambda g, x, o: g / x, "log")


def vsqrt(a):
    return _unary(a, np.sqrt, lambda g, x, o: g * 0.5 / o, "sqrt")


def vabs(a):
    # subgradient 0 at the kink
    return _unary(a, np.abs, lambda g, x, o: g * np.sign(x), "abs")


def vsin(a):
    return _unary(a, np.sin, lambda g, x, o: g * np.cos(x), "sin")


def vcos(a):
    return _unary(a, np.cos, lambda g, x, o: -g * np.sin(x), "cos")


def vtanh(a):
    return _unary(a, np.tanh, lambda g, x, o: g * (1.0 - o * o), "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    m = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + m), m / (1.0 + m))


def sigmoid(a):
    return _unary(a, _sigmoid_np, lambda g, x, o: g * o * (1.0 - o), "sigmoid")


def maximum(a, floor: float):
    """Elementwise max against a scalar; zero gradient where clamped."""
    return _unary(a, lambda x: np.maximum(x, floor),
                  lambda g, x, o: g * (x > floor), "maximum")


def clip(a, lo: float, hi: float):
    """Elementwise clamp to [lo, hi]; zero gradient where clamped."""
    return _unary(a, lambda x: np.clip(x, lo, hi),
                  lambda g, x, o: g * ((x > lo) & (x < hi)), "clip")


def where(cond: np.ndarray, a, b):
    cond = np.asarray(cond, dtype=bool)
    return _binary(a, b, lambda x, y: np.where(cond, x, y),
                   lambda g, x, y: g * cond,
                   lambda g, x, y: g * (~cond), "where")


def vsum(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.value

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return custom(np.sum(av, axis=axis, keepdims=keepdims), [(a, vjp)], "sum")


def vmean(a, axis=None, keepdims=False):
    av = value_of(a)
    if axis is None:
        n = av.size
    else:
        n = av.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) / float(n)


def take(a, key):
    if not isinstance(a, Var):
        return _as_array(a)[key]
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, key, g)
        return out

    return custom(av[key], [(a, vjp)], "take")


def reshape(a, shape):
    if not isinstance(a, Var):
        return _as_array(a).reshape(shape)
    av = a.value
    return custom(av.reshape(shape), [(a, lambda g: np.asarray(g).reshape(av.shape))], "reshape")


def transpose(a, axes=None):
    if not isinstance(a, Var):
        return np.transpose(a, axes)
    av = a.value
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return custom(np.transpose(av, axes),
                  [(a, lambda g: np.transpose(np.asarray(g), inv))], "transpose")


def matmul(a, b):
    return _binary(
        a, b, np.matmul,
        lambda g, x, y: np.matmul(g, np.swapaxes(y, -1, -2)),
        lambda g, x, y: np.matmul(np.swapaxes(x, -1, -2), g),
        "matmul")


def einsum2(spec: str, a, b):
    """Two-operand einsum with reverse-mode support.

    Requires that no index is repeated within one operand and that every
    index of each operand appears in the other operand or the output
    (true for the contraction patterns used in this package).
    """
    ins, out_idx = spec.replace(" ", "").split("->")
    a_idx, b_idx = ins.split(",")
    fwd = lambda x, y: np.einsum(spec, x, y)
    vjp_a = lambda g, x, y: np.einsum(f"{out_idx},{b_idx}->{a_idx}", g, y)
    vjp_b = lambda g, x, y: np.einsum(f"{out_idx},{a_idx}->{b_idx}", g, x)
    return _binary(a, b, fwd, vjp_a, vjp_b, f"einsum:{spec}")


def stack(items, axis=0):
    vals = [value_of(x) for x in items]
    out = np.stack(vals, axis=axis)
    tape = _tape_of(*items)
    if tape is None:
        return out
    parents = []
    for i, x in enumerate(items):
        if isinstance(x, Var):
            def vjp(g, i=i):
                return np.take(np.asarray(g), i, axis=axis)
            parents.append((x, vjp))
    return custom(out, parents, "stack")


def concatenate(items, axis=0):
    vals = [value_of(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    tape = _tape_of(*items)
    if tape is None:
        return out
    parents = []
    offset = 0
    for x, v in zip(items, vals):
        n = v.shape[axis]
        if isinstance(x, Var):
            sl = [slice(None)] * v.ndim
            sl[axis] = slice(offset, offset + n)
            sl = tuple(sl)
            parents.append((x, lambda g, sl=sl: np.asarray(g)[sl]))
        offset += n
    return custom(out, parents, "concat")


def exclusive_cumsum(a, axis: int):
    """out[..., i] = sum of entries strictly before i along `axis`."""
    def fwd(x):
        c = np.cumsum(x, axis=axis)
        return c - x

    def vjp(g, x, o):
        g = np.asarray(g)
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return rev - g

    return _unary(a, fwd, vjp, "exclusive_cumsum")


# ---------------------------------------------------------------------------
# evaluation drivers
# ---------------------------------------------------------------------------

@dataclass
class GradientReport:
    """Scalar loss plus per-parameter-block gradients (same shapes as blocks)."""
    loss: float
    gradients: Dict[str, np.ndarray]


@dataclass
class CoordCheck:
    block: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float
    passed: bool


@dataclass
class FDReport:
    checks: List[CoordCheck] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[CoordCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def max_rel_err(self) -> float:
        return max((c.rel_err for c in self.checks), default=0.0)


def evaluate_with_gradients(loss_program: Callable[[Dict[str, Var]], Var],
                            params: Dict[str, np.ndarray]) -> GradientReport:
    """Run `loss_program` on a fresh tape and backpropagate its scalar output.

    Raises NonFiniteLoss if the forward pass produced NaN/Inf anywhere,
    identifying the earliest offending node.
    """
    tape = Tape()
    var_params = {name: tape.param(name, arr) for name, arr in params.items()}
    loss = loss_program(var_params)
    if not isinstance(loss, Var):
        loss = _const_loss(tape, loss)
    if not np.all(np.isfinite(loss.value)):
        bad = tape.first_nonfinite_node()
        where_ = f" at node #{bad.index} ({bad.op})" if bad is not None else ""
        raise NonFiniteLoss(f"forward pass is non-finite{where_}")
    grads = tape.backward(loss)
    return GradientReport(loss=float(loss.value), gradients=grads)


def _const_loss(tape: Tape, value) -> Var:
    # A program that ignores its parameters still has well-defined (zero)
    # gradients; route the constant through a throwaway node.
    anchor = next(iter(tape.params.values()), None)
    if anchor is None:
        raise ValueError("loss program returned a constant and no parameters exist")
    zero = vsum(anchor * 0.0)
    return add(zero, float(value))


def evaluate_loss(loss_program: Callable[[Dict[str, Var]], Var],
                  params: Dict[str, np.ndarray]) -> float:
    """Forward-only evaluation (no gradients); still checks finiteness."""
    tape = Tape()
    var_params = {name: tape.param(name, arr) for name, arr in params.items()}
    loss = loss_program(var_params)
    val = float(value_of(loss))
    if not np.isfinite(val):
        raise NonFiniteLoss("forward pass is non-finite")
    return val


def finite_difference_check(loss_program: Callable[[Dict[str, Var]], Var],
                            params: Dict[str, np.ndarray],
                            step: float = 1e-6,
                            tol: float = 1e-4,
                            max_coords_per_block: Optional[int] = 24,
                            abs_floor: float = 1e-8) -> FDReport:
    """Compare tape gradients against central finite differences.

    A coordinate passes when |analytic - numeric| <= max(tol * scale,
    abs_floor) with scale = max(|analytic|, |numeric|); equivalently the
    reported rel_err = err / max(scale, abs_floor / tol) stays <= tol, so
    the absolute floor protects near-zero gradients from FD noise. Large
    blocks are subsampled deterministically (evenly spaced coordinates
    plus the largest-magnitude gradient entry).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = evaluate_with_gradients(loss_program, params)
    report = FDReport()
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    for name in params:
        flat_grad = base.gradients[name].reshape(-1)
        n = flat_grad.size
        if max_coords_per_block is None or n <= max_coords_per_block:
            coords = list(range(n))
        else:
            stride = max(1, n // max_coords_per_block)
            coords = list(range(0, n, stride))[:max_coords_per_block]
            top = int(np.argmax(np.abs(flat_grad)))
            if top not in coords:
                coords[-1] = top
        arr = work[name].reshape(-1)
        for i in coords:
            orig = arr[i]
            arr[i] = orig + step
            f_plus = evaluate_loss(loss_program, work)
            arr[i] = orig - step
            f_minus = evaluate_loss(loss_program, work)
            arr[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = float(flat_grad[i])
            scale = max(abs(analytic), abs(numeric), abs_floor / tol)
            err = abs(analytic - numeric)
            rel = err / scale
            passed = rel <= tol
            report.checks.append(CoordCheck(
                block=name,
                index=np.unravel_index(i, params[name].shape if params[name].shape else (1,)),
                analytic=analytic, numeric=numeric, rel_err=rel, passed=passed))
    return report
