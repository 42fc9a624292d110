"""Recurrent cells (basic, GRU, LSTM) and the affine predictor head.

Each cell keeps its weights in one flat float64 vector laid out as::

    W_all  (G*n_r, n_in)   row-major, gates stacked in ``GATES[kind]`` order
    U_all  (G*n_r, n_r)
    b_all  (G*n_r,)

Per-gate blocks (``W_z``, ``U_f``, ...) are views into that vector, so the
optimizer and the checkpoint code only ever see one array per cell.

All step functions accept a single vector ``(n,)`` or a batch ``(B, n)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .mathcore import DTYPE, ShapeError, sigmoid_vec


class CellKind(str, enum.Enum):
    BASIC = "basic"
    GRU = "gru"
    LSTM = "lstm"

    @classmethod
    def parse(cls, token: str) -> "CellKind":
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown cell kind {token!r}; expected one of basic, gru, lstm"
            ) from None


GATES = {
    CellKind.BASIC: ("h",),
    CellKind.GRU: ("z", "r", "h"),
    CellKind.LSTM: ("i", "f", "o", "g"),
}


def param_count(kind: CellKind, n_in: int, n_r: int) -> int:
    g = len(GATES[kind])
    return g * n_r * (n_in + n_r + 1)


@dataclass(frozen=True, eq=False)
class CellParams:
    kind: CellKind
    n_in: int
    n_r: int
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_in <= 0 or self.n_r <= 0:
            raise ValueError(f"cell dims must be positive, got n_in={self.n_in}, n_r={self.n_r}")
        expected = param_count(self.kind, self.n_in, self.n_r)
        if self.theta.shape != (expected,):
            raise ShapeError(
                f"{self.kind.value} cell ({self.n_in}->{self.n_r}) needs {expected} "
                f"parameters, got array of shape {self.theta.shape}"
            )

    @property
    def n_gates(self) -> int:
        return len(GATES[self.kind])

    @cached_property
    def W(self) -> np.ndarray:
        rows = self.n_gates * self.n_r
        return self.theta[: rows * self.n_in].reshape(rows, self.n_in)

    @cached_property
    def U(self) -> np.ndarray:
        rows = self.n_gates * self.n_r
        start = rows * self.n_in
        return self.theta[start : start + rows * self.n_r].reshape(rows, self.n_r)

    @cached_property
    def b(self) -> np.ndarray:
        rows = self.n_gates * self.n_r
        return self.theta[rows * (self.n_in + self.n_r) :]

    @cached_property
    def WT(self) -> np.ndarray:
        return self.W.T

    @cached_property
    def UT(self) -> np.ndarray:
        return self.U.T

    def block(self, name: str) -> np.ndarray:
        """Per-gate view, e.g. ``block("W_z")`` or ``block("b_f")``."""
        mat, _, gate = name.partition("_")
        try:
            gi = GATES[self.kind].index(gate or "h")
        except ValueError:
            raise KeyError(f"{self.kind.value} cell has no gate {gate!r}") from None
        rows = slice(gi * self.n_r, (gi + 1) * self.n_r)
        if mat == "W":
            return self.W[rows]
        if mat == "U":
            return self.U[rows]
        if mat == "b":
            return self.b[rows]
        raise KeyError(name)

    def with_theta(self, theta: np.ndarray) -> "CellParams":
        return CellParams(self.kind, self.n_in, self.n_r, np.asarray(theta, dtype=DTYPE))

    def zeros_like(self) -> "CellParams":
        return self.with_theta(np.zeros_like(self.theta))


@dataclass(frozen=True, eq=False)
class LayerState:
    """Exposed state ``h`` of one layer; ``c`` is the LSTM cell memory."""

    h: np.ndarray
    c: np.ndarray | None = None

    def flat(self, include_c: bool = False) -> np.ndarray:
        if include_c and self.c is not None:
            return np.concatenate([self.h, self.c], axis=-1)
        return self.h


@dataclass(frozen=True, eq=False)
class PredictorParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"predictor W{self.W.shape} and b{self.b.shape} do not match")

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    def with_theta(self, theta: np.ndarray) -> "PredictorParams":
        theta = np.asarray(theta, dtype=DTYPE)
        nw = self.W.size
        if theta.shape != (nw + self.n_out,):
            raise ShapeError(f"predictor needs {nw + self.n_out} parameters, got {theta.shape}")
        return PredictorParams(theta[:nw].reshape(self.W.shape).copy(), theta[nw:].copy())


def zero_layer_state(params: CellParams, batch: int | None = None) -> LayerState:
    shape = (params.n_r,) if batch is None else (batch, params.n_r)
    h = np.zeros(shape, dtype=DTYPE)
    c = np.zeros(shape, dtype=DTYPE) if params.kind is CellKind.LSTM else None
    return LayerState(h, c)


def _check_inputs(params: CellParams, x: np.ndarray, s: LayerState, where: str):
    if x.shape[-1:] != (params.n_in,):
        raise ShapeError(f"{where}: input has shape {x.shape}, expected last dim {params.n_in}")
    if s.h.shape[-1:] != (params.n_r,) or s.h.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"{where}: state h has shape {s.h.shape}, expected (..., {params.n_r}) matching input {x.shape}")
    if (s.c is not None) != (params.kind is CellKind.LSTM):
        raise ShapeError(f"{where}: cell memory c must be present iff the cell is an LSTM")
    if s.c is not None and s.c.shape != s.h.shape:
        raise ShapeError(f"{where}: LSTM c shape {s.c.shape} differs from h shape {s.h.shape}")


def cell_step(params: CellParams, x: np.ndarray, s: LayerState):
    """Forward step returning ``(new_state, cache)``; the cache feeds ``cell_backward``."""
    h_new, c_new, cache = _forward(params, x, s.h, s.c)
    return LayerState(h_new, c_new), cache


def _forward(params: CellParams, x, h, c):
    n = params.n_r
    kind = params.kind
    if kind is CellKind.BASIC:
        h_new = np.tanh(x @ params.WT + h @ params.UT + params.b)
        return h_new, None, (h_new,)
    if kind is CellKind.GRU:
        ax = x @ params.WT + params.b
        zr = sigmoid_vec(ax[..., : 2 * n] + h @ params.UT[:, : 2 * n])
        z = zr[..., :n]
        r = zr[..., n:]
        rh = r * h
        hc = np.tanh(ax[..., 2 * n :] + rh @ params.UT[:, 2 * n :])
        return h + z * (hc - h), None, (z, r, rh, hc)
    a = x @ params.WT + h @ params.UT + params.b
    ifo = sigmoid_vec(a[..., : 3 * n])
    i = ifo[..., :n]
    f = ifo[..., n : 2 * n]
    o = ifo[..., 2 * n :]
    g = np.tanh(a[..., 3 * n :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (i, f, o, g, tc)


def cell_forward(params: CellParams, x, s_prev: LayerState, layer: int | None = None) -> LayerState:
    x = np.asarray(x, dtype=DTYPE)
    where = f"layer {layer} ({params.kind.value})" if layer is not None else f"{params.kind.value} cell"
    _check_inputs(params, x, s_prev, where)
    return cell_step(params, x, s_prev)[0]


def cell_backward(params: CellParams, x, s_prev: LayerState, upstream: LayerState, cache=None):
    """Reverse-mode step through one cell application.

    ``upstream`` holds dL/dh' (and dL/dc' for LSTM, ``None`` meaning zero).
    Returns ``(grad_params, grad_x, grad_s_prev)`` where ``grad_params`` is a
    ``CellParams`` carrying gradients in the same flat layout. For batched
    inputs the parameter gradient is summed over the batch.
    """
    x = np.asarray(x, dtype=DTYPE)
    if cache is None:
        _check_inputs(params, x, s_prev, f"{params.kind.value} cell backward")
        cache = cell_step(params, x, s_prev)[1]
    if upstream.h.shape != s_prev.h.shape:
        raise ShapeError(f"upstream gradient shape {upstream.h.shape} differs from state shape {s_prev.h.shape}")
    dA, u_op, dx, dh, dc = _backward(params, x, s_prev.h, s_prev.c, upstream.h, upstream.c, cache)
    grad = param_grad(params, np.atleast_2d(dA), np.atleast_2d(x), np.atleast_2d(s_prev.h), np.atleast_2d(u_op))
    return params.with_theta(grad), dx, LayerState(dh, dc)


def _backward(params: CellParams, x, h, c, dh_out, dc_out, cache):
    """Backward step without the parameter reduction.

    Returns ``(dA, u_op, dx, dh_prev, dc_prev)``: ``dA`` is the gradient of the
    stacked gate pre-activations and ``u_op`` the vector the candidate rows of
    ``U`` multiply (``h``, or ``r*h`` for the GRU). ``param_grad`` turns these
    into the flat parameter gradient, possibly for many steps at once.
    """
    n = params.n_r
    kind = params.kind
    if kind is CellKind.BASIC:
        (h_new,) = cache
        dA = dh_out * (1.0 - h_new * h_new)
        return dA, h, dA @ params.W, dA @ params.U, None

    if kind is CellKind.GRU:
        z, r, rh, hc = cache
        dah = dh_out * z * (1.0 - hc * hc)
        drh = dah @ params.U[2 * n :]
        dzr = np.concatenate([dh_out * (hc - h) * z * (1.0 - z), drh * h * r * (1.0 - r)], axis=-1)
        dA = np.concatenate([dzr, dah], axis=-1)
        dh = dh_out * (1.0 - z) + drh * r + dzr @ params.U[: 2 * n]
        return dA, rh, dA @ params.W, dh, None

    i, f, o, g, tc = cache
    dc = dh_out * o * (1.0 - tc * tc)
    if dc_out is not None:
        dc = dc + dc_out
    dA = np.concatenate(
        [dc * g * i * (1.0 - i), dc * c * f * (1.0 - f), dh_out * tc * o * (1.0 - o), dc * i * (1.0 - g * g)],
        axis=-1,
    )
    return dA, h, dA @ params.W, dA @ params.U, dc * f


def param_grad(params: CellParams, dA, x, h, u_op) -> np.ndarray:
    """Flat parameter gradient from row-stacked step quantities (rows = samples x steps)."""
    gW = dA.T @ x
    if params.kind is CellKind.GRU:
        n2 = 2 * params.n_r
        gU = np.concatenate([dA[:, :n2].T @ h, dA[:, n2:].T @ u_op], axis=0)
    else:
        gU = dA.T @ h
    return np.concatenate([gW.ravel(), gU.ravel(), dA.sum(axis=0)])


def predictor_apply(params: PredictorParams, s) -> np.ndarray:
    s = np.asarray(s, dtype=DTYPE)
    if s.shape[-1:] != (params.n_in,):
        raise ShapeError(f"predictor expects state of length {params.n_in}, got shape {s.shape}")
    return s @ params.W.T + params.b


def init_params(kind: CellKind, n_in: int, n_r: int, rng: np.random.Generator | None = None,
                scheme: str = "uniform") -> CellParams:
    """Initialise a cell.

    ``"uniform"`` draws every weight from U(-1/sqrt(n_in + n_r), +1/sqrt(n_in + n_r))
    and zeroes the biases, except the LSTM forget-gate bias which starts at 1.
    ``"zeros"`` returns an all-zero cell (test hook).
    """
    kind = CellKind(kind)
    theta = np.zeros(param_count(kind, n_in, n_r), dtype=DTYPE)
    params = CellParams(kind, n_in, n_r, theta)
    if scheme == "zeros":
        return params
    if scheme != "uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if rng is None:
        raise ValueError("uniform init needs an rng")
    bound = 1.0 / np.sqrt(n_in + n_r)
    nw = params.W.size + params.U.size
    theta[:nw] = rng.uniform(-bound, bound, size=nw)
    if kind is CellKind.LSTM:
        params.block("b_f")[:] = 1.0
    return params


def init_predictor(n_out: int, n_in: int, rng: np.random.Generator | None = None,
                   scheme: str = "uniform") -> PredictorParams:
    W = np.zeros((n_out, n_in), dtype=DTYPE)
    b = np.zeros(n_out, dtype=DTYPE)
    if scheme == "uniform":
        if rng is None:
            raise ValueError("uniform init needs an rng")
        bound = 1.0 / np.sqrt(n_in)
        W[:] = rng.uniform(-bound, bound, size=W.shape)
    elif scheme != "zeros":
        raise ValueError(f"unknown init scheme {scheme!r}")
    return PredictorParams(W, b)
