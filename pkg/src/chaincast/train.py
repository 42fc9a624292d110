"""Synthetic waveform data, backpropagation through time, and Adam training."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cells import _backward, cell_step, param_grad
from .chain import ChainModel, zero_state
from .mathcore import DTYPE, ShapeError, make_rng

log = logging.getLogger(__name__)


class Waveform(str, enum.Enum):
    SINE = "sine"
    TRIANGLE = "triangle"


def waveform(kind: Waveform | str, t) -> np.ndarray:
    """Unit-amplitude, period-1 signal. The triangle rises through the origin at t=0."""
    t = np.asarray(t, dtype=DTYPE)
    kind = Waveform(kind)
    if kind is Waveform.SINE:
        return np.sin(2.0 * np.pi * t)
    u = np.mod(t + 0.25, 1.0)
    return 1.0 - 4.0 * np.abs(u - 0.5)


@dataclass(frozen=True)
class DatasetSpec:
    waveform: Waveform = Waveform.SINE
    noise_amplitude: float = 0.15
    dt: float = 0.01
    m_min: int = 5
    m_max: int = 150
    count: int = 12000
    seed: int = 0
    clean_targets: bool = False

    def __post_init__(self):
        object.__setattr__(self, "waveform", Waveform(self.waveform))
        if self.noise_amplitude < 0:
            raise ValueError("noise amplitude must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 5 <= self.m_min <= self.m_max:
            raise ValueError(f"need 5 <= m_min <= m_max, got [{self.m_min}, {self.m_max}]")
        if self.count < 0:
            raise ValueError("segment count must be non-negative")


@dataclass(frozen=True, eq=False)
class Segment:
    inputs: np.ndarray   # (m, n0)
    target: np.ndarray   # (n0,)
    t0: float = 0.0

    @property
    def m(self) -> int:
        return self.inputs.shape[0]


def make_segment(spec: DatasetSpec, t0: float, m: int, noise: np.ndarray | None = None) -> Segment:
    """Build one segment starting at ``t0``; ``noise`` holds m+1 standard normals."""
    t = t0 + spec.dt * np.arange(m + 1)
    clean = waveform(spec.waveform, t)
    values = clean if noise is None else clean + spec.noise_amplitude * noise
    target = clean[m] if spec.clean_targets else values[m]
    return Segment(values[:m].reshape(m, 1), np.array([target], dtype=DTYPE), float(t0))


def generate_dataset(spec: DatasetSpec) -> list[Segment]:
    segments = []
    for i in range(spec.count):
        # one independent stream per segment
        rng = make_rng(spec.seed, 0, i)
        t0 = rng.uniform(0.0, 1.0)
        m = int(rng.integers(spec.m_min, spec.m_max + 1))
        noise = rng.standard_normal(m + 1)
        segments.append(make_segment(spec, t0, m, noise))
    return segments


def split_dataset(segments: Sequence[Segment], fraction: float, seed: int = 0):
    """Shuffle deterministically and return ``(train, val)`` with ``round(fraction*N)`` in train."""
    if not segments:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    n = len(segments)
    order = make_rng(seed, 4).permutation(n)
    n_train = int(round(fraction * n))
    train = [segments[i] for i in order[:n_train]]
    val = [segments[i] for i in order[n_train:]]
    return train, val


def _bptt(model: ChainModel, X: np.ndarray, Y: np.ndarray, want_grad: bool = True):
    """Loss and flat gradient for a batch of equal-length sequences.

    ``X`` has shape (B, m, n0), ``Y`` shape (B, n0). The loss is the mean of
    squared errors over batch and output components.
    """
    B, m, n0 = X.shape
    cells = model.cells
    k = len(cells)
    states = list(zero_state(model, B))
    tape = []
    for t in range(m):
        inp = X[:, t]
        row = []
        for r in range(k):
            s_prev = states[r]
            s_new, cache = cell_step(cells[r], inp, s_prev)
            if want_grad:
                row.append((inp, s_prev, cache))
            states[r] = s_new
            inp = s_new.h
        if want_grad:
            tape.append(row)
    h_top = states[-1].h
    Wp, bp = model.predictor.W, model.predictor.b
    pred = h_top @ Wp.T + bp
    diff = pred - Y
    loss = float(np.mean(diff * diff))
    if not want_grad:
        return loss, None

    dpred = (2.0 / diff.size) * diff
    g_pred = np.concatenate([(dpred.T @ h_top).ravel(), dpred.sum(axis=0)])
    dh = [np.zeros_like(s.h) for s in states]
    dc = [None] * k
    dh[-1] = dh[-1] + dpred @ Wp
    # per-layer, per-step quantities; parameter grads are reduced once at the end
    dAs = [[None] * m for _ in range(k)]
    u_ops = [[None] * m for _ in range(k)]
    for t in range(m - 1, -1, -1):
        row = tape[t]
        dx = None
        for r in range(k - 1, -1, -1):
            inp, s_prev, cache = row[r]
            up = dh[r] if dx is None else dh[r] + dx
            dAs[r][t], u_ops[r][t], dx, dh[r], dc[r] = _backward(
                cells[r], inp, s_prev.h, s_prev.c, up, dc[r], cache
            )
    g_cells = []
    for r in range(k):
        xs = np.concatenate([tape[t][r][0] for t in range(m)])
        hs = np.concatenate([tape[t][r][1].h for t in range(m)])
        g_cells.append(param_grad(cells[r], np.concatenate(dAs[r]), xs, hs, np.concatenate(u_ops[r])))
    return loss, np.concatenate(g_cells + [g_pred])


def loss_and_grads(model: ChainModel, segment: Segment) -> tuple[float, ChainModel]:
    """Squared one-step prediction error of ``segment`` and its gradient (model-shaped)."""
    X = np.asarray(segment.inputs, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != model.n0:
        raise ShapeError(f"segment inputs have shape {X.shape}, model expects (m, {model.n0})")
    Y = np.asarray(segment.target, dtype=DTYPE).reshape(1, -1)
    if Y.shape[1] != model.n0:
        raise ShapeError(f"segment target has length {Y.shape[1]}, model expects {model.n0}")
    loss, g = _bptt(model, X[None], Y)
    return loss, model.with_flat(g)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    validation_fraction: float = 0.2
    seed: int = 0
    grad_clip: float | None = 5.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size must be >= 1 and epochs >= 0")


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n, dtype=DTYPE), np.zeros(n, dtype=DTYPE), 0)


def clip_by_global_norm(grads: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grads
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update on flat vectors; returns ``(params, state)``."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError(f"adam: params {params.shape}, grads {grads.shape}, moments {state.m.shape}")
    g = clip_by_global_norm(grads, cfg.grad_clip)
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (g * g)
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return new, AdamState(m, v, t)


class TrainingDiverged(ArithmeticError):
    pass


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    val_mse: float


@dataclass
class TrainResult:
    model: ChainModel
    history: list[EpochStats] = field(default_factory=list)
    initial_val_mse: float = float("nan")


def _buckets(segments: Sequence[Segment]):
    """Group segments by length -> {m: (X (n, m, n0), Y (n, n0))}."""
    by_len: dict[int, list[Segment]] = {}
    for s in segments:
        by_len.setdefault(s.m, []).append(s)
    return {
        m: (np.stack([s.inputs for s in segs]), np.stack([s.target for s in segs]))
        for m, segs in sorted(by_len.items())
    }


def evaluate_mse(model: ChainModel, segments: Sequence[Segment], chunk: int = 256) -> float:
    """Mean squared one-step error over ``segments`` (forward only)."""
    if not segments:
        return float("nan")
    total, count = 0.0, 0
    for X, Y in _buckets(segments).values():
        for s in range(0, len(X), chunk):
            xb, yb = X[s : s + chunk], Y[s : s + chunk]
            loss, _ = _bptt(model, xb, yb, want_grad=False)
            total += loss * yb.size
            count += yb.size
    return total / count


def train(model: ChainModel, dataset: Sequence[Segment], cfg: TrainConfig,
          progress: Callable[[EpochStats], None] | None = None) -> TrainResult:
    """Mini-batch Adam over equal-length buckets; deterministic given ``cfg.seed``.

    Segments of one length are batched together (no padding). Batch order is
    reshuffled each epoch from a stream keyed on (seed, epoch).
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    train_set, val_set = split_dataset(dataset, 1.0 - cfg.validation_fraction, cfg.seed)
    buckets = _buckets(train_set)
    theta = model.flat_params()
    adam = AdamState.zeros(theta.size)
    result = TrainResult(model, [], evaluate_mse(model, val_set))

    for epoch in range(1, cfg.epochs + 1):
        rng = make_rng(cfg.seed, 3, epoch)
        batches = []
        for m, (X, Y) in buckets.items():
            order = rng.permutation(len(X))
            for s in range(0, len(order), cfg.batch_size):
                batches.append((m, order[s : s + cfg.batch_size]))
        batch_order = rng.permutation(len(batches))

        total, count = 0.0, 0
        for bi, idx in enumerate(batch_order):
            m, sel = batches[idx]
            X, Y = buckets[m]
            loss, grad = _bptt(model, X[sel], Y[sel])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bi}")
            theta, adam = adam_step(theta, grad, adam, cfg)
            model = model.with_flat(theta)
            total += loss * len(sel)
            count += len(sel)

        stats = EpochStats(epoch, total / count, evaluate_mse(model, val_set))
        if not np.isfinite(stats.val_mse):
            raise TrainingDiverged(f"non-finite validation loss after epoch {epoch}")
        result.history.append(stats)
        log.info("epoch %d: train %.6g val %.6g", epoch, stats.train_mse, stats.val_mse)
        if progress is not None:
            progress(stats)

    result.model = model
    return result

