"""Shifted-difference traces, decay fits and rollout comparisons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainModel, StateRecord
from .rollout import ResetPolicy, RolloutResult, predict_ew, predict_ml, predict_mw


class NoDecayRegime(ValueError):
    """Too few trace entries above the floor to fit a line."""


@dataclass(frozen=True, eq=False)
class DeltaTrace:
    layer: int          # 1-based
    round: int          # j, comparing rounds j and j+1 (1-based)
    norms: np.ndarray   # delta_i for i = 1..m-1


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r_squared: float
    floor_index: int | None
    n_points: int


@dataclass(frozen=True, eq=False)
class DivergenceReport:
    max_abs: float
    mean_abs: float
    per_step: np.ndarray


def shifted_norms(rec_j: StateRecord, rec_next: StateRecord, layer: int,
                  include_c: bool = False) -> np.ndarray:
    """||s_{i+1}^j - s_i^{j+1}|| for i = 1..m-1 on 0-based ``layer``."""
    a = rec_j.layer(layer, include_c)
    b = rec_next.layer(layer, include_c)
    if a.shape != b.shape:
        raise ValueError(f"records of adjacent rounds differ in shape: {a.shape} vs {b.shape}")
    return np.linalg.norm(a[1:] - b[:-1], axis=1)


def traces_from_records(records: list[StateRecord], include_c: bool = False) -> list[DeltaTrace]:
    if records is None or len(records) < 2:
        raise ValueError("shifted differences need state records from at least two rounds")
    out = []
    for j in range(len(records) - 1):
        for r in range(len(records[j].h)):
            out.append(DeltaTrace(r + 1, j + 1, shifted_norms(records[j], records[j + 1], r, include_c)))
    return out


def shifted_difference(model: ChainModel, X, rounds: int,
                       policy: ResetPolicy | str = ResetPolicy.ZERO,
                       include_c: bool = False) -> list[DeltaTrace]:
    """Run ``rounds`` moving-window rounds and trace every layer for each adjacent round pair."""
    if rounds < 2:
        raise ValueError("need at least two rounds to form a shifted difference")
    res = predict_mw(model, X, rounds, policy, record=True)
    return traces_from_records(res.state_records, include_c)


def select_traces(traces: list[DeltaTrace], round: int) -> list[DeltaTrace]:
    return sorted((t for t in traces if t.round == round), key=lambda t: t.layer)


def fit_decay(trace: DeltaTrace | np.ndarray, floor_eps: float = 1e-12) -> DecayFit:
    """Least-squares line through (i, ln delta_i) over entries above ``floor_eps``.

    ``floor_index`` is the first (1-based) i from which every later entry stays
    at or below ``floor_eps``; ``None`` if the trace never settles there.
    """
    norms = np.asarray(trace.norms if isinstance(trace, DeltaTrace) else trace, dtype=float)
    i = np.arange(1, norms.size + 1, dtype=float)
    above = norms > floor_eps
    if above.sum() < 3:
        raise NoDecayRegime(f"only {int(above.sum())} entries above {floor_eps:g}; no decay regime to fit")
    below_tail = np.flatnonzero(above)
    floor_index = int(below_tail[-1]) + 2 if below_tail[-1] + 1 < norms.size else None
    x, y = i[above], np.log(norms[above])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - float(np.sum(resid**2)) / ss_tot)
    return DecayFit(float(slope), float(intercept), min(r2, 1.0), floor_index, int(above.sum()))


def trajectory_divergence(a: RolloutResult | np.ndarray, b: RolloutResult | np.ndarray) -> DivergenceReport:
    pa = np.asarray(a.predictions if isinstance(a, RolloutResult) else a, dtype=float)
    pb = np.asarray(b.predictions if isinstance(b, RolloutResult) else b, dtype=float)
    if pa.shape != pb.shape:
        raise ValueError(f"rollouts have different shapes {pa.shape} and {pb.shape}")
    d = np.abs(pa - pb).reshape(pa.shape[0], -1).max(axis=1)
    return DivergenceReport(float(d.max()), float(d.mean()), d)


def ew_ml_equivalence(model: ChainModel, X, p: int, tol: float,
                      max_len: int | None = None) -> tuple[bool, DivergenceReport]:
    """Compare expanding-window and memoryless rollouts of the same window."""
    X = list(X)
    ew = predict_ew(model, X, p, max_len)
    ml = predict_ml(model, X, p)
    rep = trajectory_divergence(ew, ml)
    return rep.max_abs < tol, rep


def edge_ratios(traces: list[DeltaTrace], final_states, include_c: bool = False) -> list[float]:
    """delta_{r,m-1}^j / ||s_{r,m}^j|| per layer for the traces of one round pair.

    ``final_states`` are the round-j final chain states the traces start from.
    """
    out = []
    for t in traces:
        s = final_states[t.layer - 1].flat(include_c)
        out.append(float(t.norms[-1] / np.linalg.norm(s)))
    return out
