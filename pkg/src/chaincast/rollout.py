"""Multi-step autoregressive rollouts: moving window, expanding window, memoryless.

Every rollout tallies its own work in ``transform_count``: one unit per
layer per input element pushed through the chain, plus one per predictor
call. The closed forms are in ``count_mw`` / ``count_ew`` / ``count_ml``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .chain import ChainModel, ChainState, StateRecord, chain_predict_next, chain_run, chain_step, zero_state
from .mathcore import DTYPE


class ResetPolicy(str, enum.Enum):
    ZERO = "zero"
    INHERIT = "inherit"


@dataclass
class RolloutResult:
    predictions: np.ndarray                    # (p, n0)
    transform_count: int
    round_final_states: list[ChainState] | None = None
    state_records: list[StateRecord] | None = None
    algorithm: str = ""

    @property
    def p(self) -> int:
        return self.predictions.shape[0]


@dataclass
class _Tally:
    model: ChainModel
    count: int = 0
    finals: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def run(self, X: list, state0, record: bool):
        final, rec = chain_run(self.model, X, state0, record=record)
        self.count += self.model.k * len(X)
        return final, rec

    def step(self, x, state):
        self.count += self.model.k
        return chain_step(self.model, x, state)

    def predict(self, state):
        self.count += 1
        return chain_predict_next(self.model, state)


def _as_elements(X, n0: int) -> list[np.ndarray]:
    out = []
    for x in X:
        v = np.atleast_1d(np.asarray(x, dtype=DTYPE))
        if v.shape != (n0,):
            raise ValueError(f"input element has shape {v.shape}, expected ({n0},)")
        out.append(v)
    return out


def _check_counts(m: int, p: int):
    if m < 1:
        raise ValueError("input window must contain at least one element")
    if p < 1:
        raise ValueError("need p >= 1 predictions")


def predict_mw(model: ChainModel, X, p: int, policy: ResetPolicy | str = ResetPolicy.ZERO,
               record: bool = False) -> RolloutResult:
    """Moving window: each round re-runs the last m values, then slides by one."""
    policy = ResetPolicy(policy)
    window = deque(_as_elements(X, model.n0))
    m = len(window)
    _check_counts(m, p)
    tally = _Tally(model)
    preds = []
    state0 = zero_state(model)
    for _ in range(p):
        final, rec = tally.run(list(window), state0, record)
        x_next = tally.predict(final)
        preds.append(x_next)
        tally.finals.append(final)
        if record:
            tally.records.append(rec)
        window.popleft()
        window.append(x_next)
        state0 = final if policy is ResetPolicy.INHERIT else zero_state(model)
    return RolloutResult(np.array(preds), tally.count, tally.finals,
                         tally.records if record else None, f"mw-{policy.value}")


def predict_ew(model: ChainModel, X, p: int, max_len: int | None = None,
               record: bool = False) -> RolloutResult:
    """Expanding window: each round re-runs the whole history from a zero state."""
    seq = _as_elements(X, model.n0)
    m = len(seq)
    _check_counts(m, p)
    if max_len is not None and m + p - 1 > max_len:
        raise ValueError(
            f"expanding window would reach length {m + p - 1}, above the cap {max_len}"
        )
    tally = _Tally(model)
    preds = []
    for _ in range(p):
        final, rec = tally.run(seq, zero_state(model), record)
        x_next = tally.predict(final)
        preds.append(x_next)
        tally.finals.append(final)
        if record:
            tally.records.append(rec)
        seq = seq + [x_next]
    return RolloutResult(np.array(preds), tally.count, tally.finals,
                         tally.records if record else None, "ew")


def predict_ml(model: ChainModel, X: Iterable, p: int, record: bool = False) -> RolloutResult:
    """Memoryless rollout.

    Round 1 folds the chain over ``X`` once (``X`` is iterated exactly once and
    never stored). Every later round pushes only the previous prediction
    through one chain step, starting from the per-layer final states of the
    round before.
    """
    if p < 1:
        raise ValueError("need p >= 1 predictions")
    tally = _Tally(model)
    state = zero_state(model)
    hs: list[list[np.ndarray]] = [[] for _ in range(model.k)]
    cs: list[list[np.ndarray]] = [[] for _ in range(model.k)]
    m = 0
    for x in X:
        x = np.atleast_1d(np.asarray(x, dtype=DTYPE))
        if x.shape != (model.n0,):
            raise ValueError(f"input element has shape {x.shape}, expected ({model.n0},)")
        state = tally.step(x, state)
        m += 1
        if record:
            for r, s in enumerate(state):
                hs[r].append(s.h)
                if s.c is not None:
                    cs[r].append(s.c)
    _check_counts(m, p)
    records = None
    if record:
        records = [StateRecord(tuple(np.array(h) for h in hs),
                               tuple(np.array(c) if c else None for c in cs))]

    preds = []
    finals = []
    x_next = tally.predict(state)
    preds.append(x_next)
    finals.append(state)
    for _ in range(p - 1):
        state = tally.step(x_next, state)
        x_next = tally.predict(state)
        preds.append(x_next)
        finals.append(state)
    return RolloutResult(np.array(preds), tally.count, finals, records, "ml")


def count_mw(m: int, p: int, k: int) -> int:
    return (m * k + 1) * p


def count_ew(m: int, p: int, k: int) -> int:
    return count_mw(m, p, k) + k * p * (p - 1) // 2


def count_ml(m: int, p: int, k: int) -> int:
    return k * (m + p - 1) + p


def speed_gain(m: int, p: int, k: int) -> float:
    """Ratio of moving-window to memoryless transformation counts."""
    return count_mw(m, p, k) / count_ml(m, p, k)


def predict(model: ChainModel, X, p: int, algorithm: str, policy: ResetPolicy | str = ResetPolicy.ZERO,
            max_len: int | None = None, record: bool = False) -> RolloutResult:
    algorithm = algorithm.lower()
    if algorithm == "mw":
        return predict_mw(model, X, p, policy, record)
    if algorithm == "ew":
        return predict_ew(model, X, p, max_len, record)
    if algorithm == "ml":
        return predict_ml(model, X, p, record)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected mw, ew or ml")
