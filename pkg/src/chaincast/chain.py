"""A chain of recurrent cells followed by an affine predictor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cells import (
    CellKind,
    CellParams,
    LayerState,
    PredictorParams,
    _check_inputs,
    cell_step,
    init_params,
    init_predictor,
    predictor_apply,
    zero_layer_state,
)
from .mathcore import DTYPE, ShapeError, make_rng


@dataclass(frozen=True, eq=False)
class ChainModel:
    cells: tuple[CellParams, ...]
    predictor: PredictorParams

    def __post_init__(self):
        if not self.cells:
            raise ValueError("a chain needs at least one cell")
        object.__setattr__(self, "cells", tuple(self.cells))
        for r in range(1, len(self.cells)):
            if self.cells[r].n_in != self.cells[r - 1].n_r:
                raise ShapeError(
                    f"layer {r + 1} expects input dim {self.cells[r].n_in} but layer {r} "
                    f"has state dim {self.cells[r - 1].n_r}"
                )
        if self.predictor.n_in != self.cells[-1].n_r:
            raise ShapeError(
                f"predictor expects state dim {self.predictor.n_in}, last layer has {self.cells[-1].n_r}"
            )
        if self.predictor.n_out != self.cells[0].n_in:
            raise ShapeError(
                f"predictor output dim {self.predictor.n_out} differs from input dim {self.cells[0].n_in}"
            )

    @property
    def k(self) -> int:
        return len(self.cells)

    @property
    def n0(self) -> int:
        return self.cells[0].n_in

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(c.n_r for c in self.cells)

    @property
    def architecture(self) -> list[tuple[CellKind, int]]:
        return [(c.kind, c.n_r) for c in self.cells]

    def flat_params(self) -> np.ndarray:
        return np.concatenate([c.theta for c in self.cells] + [self.predictor.theta])

    def with_flat(self, theta: np.ndarray) -> "ChainModel":
        theta = np.asarray(theta, dtype=DTYPE)
        if theta.shape != (self.n_params,):
            raise ShapeError(f"model needs {self.n_params} parameters, got shape {theta.shape}")
        cells, pos = [], 0
        for c in self.cells:
            n = c.theta.size
            cells.append(c.with_theta(theta[pos : pos + n].copy()))
            pos += n
        return ChainModel(tuple(cells), self.predictor.with_theta(theta[pos:]))

    @property
    def n_params(self) -> int:
        return sum(c.theta.size for c in self.cells) + self.predictor.W.size + self.predictor.n_out


def build_model(architecture: Sequence[tuple[CellKind | str, int]], n0: int = 1, seed: int = 0,
                scheme: str = "uniform") -> ChainModel:
    """Create a chain from ``[(kind, n_r), ...]`` with deterministic init."""
    cells = []
    n_in = n0
    for r, (kind, n_r) in enumerate(architecture):
        cells.append(init_params(CellKind(kind), n_in, int(n_r), make_rng(seed, 1, r), scheme))
        n_in = int(n_r)
    pred = init_predictor(n0, n_in, make_rng(seed, 2), scheme)
    return ChainModel(tuple(cells), pred)


ChainState = tuple[LayerState, ...]


def zero_state(model: ChainModel, batch: int | None = None) -> ChainState:
    return tuple(zero_layer_state(c, batch) for c in model.cells)


def _check_state(model: ChainModel, state: ChainState):
    if len(state) != model.k:
        raise ShapeError(f"state has {len(state)} layers, model has {model.k}")


def chain_step(model: ChainModel, x, state: ChainState) -> ChainState:
    """Advance every layer by one input element; layer r consumes layer r-1's new h."""
    x = np.asarray(x, dtype=DTYPE)
    _check_state(model, state)
    out = []
    inp = x
    for r, (cell, s) in enumerate(zip(model.cells, state), start=1):
        _check_inputs(cell, inp, s, f"layer {r} ({cell.kind.value})")
        s_new = cell_step(cell, inp, s)[0]
        out.append(s_new)
        inp = s_new.h
    return tuple(out)


def _unchecked_step(model: ChainModel, x: np.ndarray, state: ChainState) -> ChainState:
    out = []
    inp = x
    for cell, s in zip(model.cells, state):
        s_new = cell_step(cell, inp, s)[0]
        out.append(s_new)
        inp = s_new.h
    return tuple(out)


@dataclass(frozen=True, eq=False)
class StateRecord:
    """Per-layer state sequences: ``h[r]`` has shape (m, n_r); ``c[r]`` for LSTM layers."""

    h: tuple[np.ndarray, ...]
    c: tuple[np.ndarray | None, ...]

    @property
    def m(self) -> int:
        return self.h[0].shape[0]

    def layer(self, r: int, include_c: bool = False) -> np.ndarray:
        """States of layer ``r`` (0-based) as an (m, dim) matrix."""
        if include_c and self.c[r] is not None:
            return np.concatenate([self.h[r], self.c[r]], axis=1)
        return self.h[r]


def chain_run(model: ChainModel, X: Iterable, state0: ChainState | None = None,
              record: bool = False) -> tuple[ChainState, StateRecord | None]:
    """Fold ``chain_step`` over ``X``; optionally keep every intermediate state."""
    state = zero_state(model) if state0 is None else state0
    _check_state(model, state)
    hs: list[list[np.ndarray]] = [[] for _ in range(model.k)]
    cs: list[list[np.ndarray]] = [[] for _ in range(model.k)]
    steps = 0
    for x in X:
        x = np.atleast_1d(np.asarray(x, dtype=DTYPE))
        if steps == 0:
            state = chain_step(model, x, state)
        else:
            if x.shape != (model.n0,):
                raise ShapeError(f"element {steps} has shape {x.shape}, expected ({model.n0},)")
            state = _unchecked_step(model, x, state)
        steps += 1
        if record:
            for r, s in enumerate(state):
                hs[r].append(s.h)
                if s.c is not None:
                    cs[r].append(s.c)
    if steps == 0:
        raise ValueError("chain_run needs a non-empty input sequence")
    rec = None
    if record:
        rec = StateRecord(
            tuple(np.array(h) for h in hs),
            tuple(np.array(c) if c else None for c in cs),
        )
    return state, rec


def chain_predict_next(model: ChainModel, state: ChainState) -> np.ndarray:
    _check_state(model, state)
    return predictor_apply(model.predictor, state[-1].h)
