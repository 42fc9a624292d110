"""``chaincast`` command line: gen-data, train, predict, compare, delta, bench.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import rollout as ro
from .chain import build_model
from .config import PRESETS, load_config
from .diagnostics import (
    NoDecayRegime,
    edge_ratios,
    fit_decay,
    select_traces,
    traces_from_records,
    trajectory_divergence,
)
from .mathcore import make_rng
from .storage import (
    CheckpointError,
    checkpoint_load,
    checkpoint_save,
    read_dataset,
    write_csv,
    write_dataset,
)
from .train import TrainingDiverged, Waveform, generate_dataset, train, waveform

log = logging.getLogger("chaincast")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config_from(args):
    cfg = load_config(args.preset, args.config)
    cfg = cfg.scaled(getattr(args, "count", None), getattr(args, "epochs", None))
    return cfg


# -- input signals ------------------------------------------------------------

def make_signal(length: int, t0: float, noise: float, seed: int, wave: str = "sine", dt: float = 0.01):
    """Noisy and clean samples of a waveform starting at ``t0``."""
    t = t0 + dt * np.arange(length)
    clean = waveform(wave, t)
    xi = make_rng(seed, 5).standard_normal(length)
    return clean + noise * xi, clean


def _load_values(path: str) -> np.ndarray:
    vals = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split(",")[0]
        try:
            vals.append(float(head))
        except ValueError:
            continue  # header row
    return np.array(vals)


def _window(args, m: int, p: int):
    """Return (input window of length m, ground truth for the next p steps or None)."""
    if args.input:
        vals = _load_values(args.input)
        if vals.size < m:
            raise UsageError(f"{args.input} holds {vals.size} values, need at least m={m}")
        truth = vals[m : m + p]
        return vals[:m], (truth if truth.size else None)
    noisy, clean = make_signal(m + p, args.t0, args.noise, args.signal_seed, args.waveform)
    return noisy[:m], clean[m:]


def _add_signal_flags(p):
    p.add_argument("--input", help="file with one input value per line (first column of a CSV)")
    p.add_argument("--t0", type=float, default=0.0, help="start time of a generated signal")
    p.add_argument("--noise", type=float, default=0.15, help="noise amplitude of a generated signal")
    p.add_argument("--signal-seed", type=int, default=7, help="noise seed of a generated signal")
    p.add_argument("--waveform", choices=[w.value for w in Waveform], default="sine")


def _load_model(path):
    try:
        return checkpoint_load(path)
    except FileNotFoundError:
        raise UsageError(f"checkpoint {path} does not exist") from None


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config_from(args)
    spec = cfg.dataset
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out) if args.out else cfg.output_dir / "dataset.txt"
    segs = generate_dataset(spec)
    write_dataset(out, segs, spec, timestamp=not args.no_timestamp)
    print(f"wrote {len(segs)} segments to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    data = Path(args.data) if args.data else cfg.output_dir / "dataset.txt"
    if not data.exists():
        raise UsageError(f"dataset {data} not found; run `chaincast gen-data` first")
    segs = read_dataset(data)
    model = build_model(cfg.architecture, n0=1, seed=cfg.init_seed)
    result = train(model, segs, cfg.train,
                   progress=lambda s: log.info("epoch %d train %.5g val %.5g", s.epoch, s.train_mse, s.val_mse))
    last = result.history[-1] if result.history else None
    meta = {
        "dataset_seed": cfg.dataset.seed,
        "dataset_size": len(segs),
        "init_seed": cfg.init_seed,
        "train_seed": cfg.train.seed,
        "epochs_completed": len(result.history),
        "final_train_mse": last.train_mse if last else None,
        "final_val_mse": last.val_mse if last else None,
        "initial_val_mse": result.initial_val_mse,
        "train_config": {k: v for k, v in cfg.train.__dict__.items()},
    }
    ckpt = Path(args.out) if args.out else cfg.output_dir / "model.ckpt"
    checkpoint_save(ckpt, result.model, meta)
    hist = Path(args.history) if args.history else ckpt.with_name(ckpt.stem + "_history.csv")
    write_csv(hist, ["epoch", "train_mse", "val_mse"],
              [(s.epoch, s.train_mse, s.val_mse) for s in result.history],
              timestamp=not args.no_timestamp)
    print(f"wrote {ckpt} and {hist}" + (f"; final val MSE {last.val_mse:.5g}" if last else ""))
    return 0


def cmd_predict(args) -> int:
    model, _ = _load_model(args.checkpoint)
    X, truth = _window(args, args.m, args.p)
    if args.algo == "ew" and args.max_len is not None and args.m + args.p - 1 > args.max_len:
        raise UsageError(f"m + p - 1 = {args.m + args.p - 1} exceeds the expanding-window cap {args.max_len}")
    res = ro.predict(model, X.reshape(-1, 1), args.p, args.algo, args.policy, args.max_len, args.record)
    out = Path(args.out) if args.out else Path(f"predict_{args.algo}.csv")
    rows = []
    for j in range(args.p):
        t = float(truth[j]) if truth is not None and j < truth.size else None
        rows.append((args.m + j + 1, float(res.predictions[j, 0]), t))
    write_csv(out, ["step", "predicted", "truth"], rows, timestamp=not args.no_timestamp,
              footer=[("transform_count", res.transform_count, "")])
    if args.record and res.state_records:
        rec_rows = []
        for j, rec in enumerate(res.state_records, start=1):
            for r, H in enumerate(rec.h, start=1):
                for i, hv in enumerate(H, start=1):
                    for u, v in enumerate(hv):
                        rec_rows.append((j, r, i, u, float(v)))
        rec_path = out.with_name(out.stem + "_states.csv")
        write_csv(rec_path, ["round", "layer", "step", "unit", "h"], rec_rows, timestamp=not args.no_timestamp)
    print(f"wrote {out} (transform_count={res.transform_count})")
    return 0


def cmd_compare(args) -> int:
    model, _ = _load_model(args.checkpoint)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for a in algos:
        if a not in ("mw", "ew", "ml"):
            raise UsageError(f"unknown algorithm {a!r}")
    pairs = list(itertools.combinations(algos, 2)) if len(set(algos)) > 1 else [(algos[0], algos[0])]
    out_dir = Path(args.out_dir)
    rows = []
    for m in args.m_list:
        X, truth = _window(args, m, args.p)
        runs = {a: ro.predict(model, X.reshape(-1, 1), args.p, a, args.policy) for a in set(algos)}
        for a, b in pairs:
            rep = trajectory_divergence(runs[a], runs[b])
            rows.append((m, a, b, rep.max_abs, rep.mean_abs))
            plot = [(i + 1, float(X[i]), None, None, None, None) for i in range(m)]
            for j in range(args.p):
                plot.append((m + j + 1, None, float(runs[a].predictions[j, 0]), float(runs[b].predictions[j, 0]),
                             float(rep.per_step[j]), float(truth[j]) if truth is not None and j < truth.size else None))
            write_csv(out_dir / f"plot_m{m}_{a}_{b}.csv", ["step", "input", a if a != b else f"{a}_1",
                      b if a != b else f"{b}_2", "abs_diff", "truth"], plot, timestamp=not args.no_timestamp)
    write_csv(out_dir / "divergence.csv", ["m", "algo_a", "algo_b", "max_abs", "mean_abs"], rows,
              timestamp=not args.no_timestamp)
    for m, a, b, mx, mn in rows:
        print(f"m={m} {a} vs {b}: max_abs={mx:.4g} mean_abs={mn:.4g}")
    return 0


def cmd_delta(args) -> int:
    if args.rounds < 2:
        raise UsageError("--rounds must be at least 2")
    if not 1 <= args.round < args.rounds:
        raise UsageError(f"--round must lie in [1, {args.rounds - 1}]")
    model, _ = _load_model(args.checkpoint)
    X, _ = _window(args, args.m, args.rounds)
    res = ro.predict_mw(model, X.reshape(-1, 1), args.rounds, args.policy, record=True)
    traces = select_traces(traces_from_records(res.state_records, args.include_c), args.round)
    header = ["i"] + [f"delta_r{t.layer}" for t in traces]
    if args.log:
        header += [f"ln_delta_r{t.layer}" for t in traces]
    rows = []
    for i in range(args.m - 1):
        row = [i + 1] + [float(t.norms[i]) for t in traces]
        if args.log:
            row += [float(np.log(t.norms[i])) if t.norms[i] > 0 else None for t in traces]
        rows.append(row)
    out = Path(args.out) if args.out else Path("delta.csv")
    write_csv(out, header, rows, timestamp=not args.no_timestamp)
    ratios = edge_ratios(traces, res.round_final_states[args.round - 1], args.include_c)
    fit_rows = []
    for t, ratio in zip(traces, ratios):
        try:
            f = fit_decay(t, args.floor_eps)
            fit_rows.append((t.layer, f.slope, f.intercept, f.r_squared, f.floor_index, f.n_points, ratio))
        except NoDecayRegime:
            fit_rows.append((t.layer, None, None, None, None, 0, ratio))
    fits = out.with_name(out.stem + "_fit.csv")
    write_csv(fits, ["layer", "slope", "intercept", "r_squared", "floor_index", "n_points", "edge_ratio"],
              fit_rows, timestamp=not args.no_timestamp)
    for row in fit_rows:
        slope = "n/a" if row[1] is None else f"{row[1]:.4g}"
        print(f"layer {row[0]}: slope={slope} edge_ratio={row[6]:.3g}")
    return 0


def _timed(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cmd_bench(args) -> int:
    ks = list(args.k_list)
    model = None
    if args.checkpoint:
        model, _ = _load_model(args.checkpoint)
        if model.k not in ks:
            ks.append(model.k)
    m, p = args.m, args.p
    rows = []
    for k in ks:
        counts = (ro.count_mw(m, p, k), ro.count_ew(m, p, k), ro.count_ml(m, p, k))
        probe = build_model([("basic", 2)] * k, seed=0)
        X = np.zeros((m, 1))
        measured = (ro.predict_mw(probe, X, p).transform_count,
                    ro.predict_ew(probe, X, p).transform_count,
                    ro.predict_ml(probe, X, p).transform_count)
        if measured != counts:
            log.error("measured counts %s differ from closed forms %s at k=%d", measured, counts, k)
            return 2
        times = (None, None, None)
        if model is not None and model.k == k:
            Xs, _ = make_signal(m, 0.0, 0.15, 7)
            Xs = Xs.reshape(-1, 1)
            times = tuple(_timed(lambda a=a: ro.predict(model, Xs, p, a), args.repeats) for a in ("mw", "ew", "ml"))
        rows.append((k, m, p, *counts, ro.speed_gain(m, p, k), *measured, *times))
    out = Path(args.out) if args.out else Path("bench.csv")
    write_csv(out, ["k", "m", "p", "N_MW", "N_EW", "N_ML", "gamma", "measured_MW", "measured_EW",
                    "measured_ML", "seconds_MW", "seconds_EW", "seconds_ML"], rows,
              timestamp=not args.no_timestamp)
    for r in rows:
        print(f"k={r[0]}: N_MW={r[3]} N_EW={r[4]} N_ML={r[5]} gamma={r[6]:.4f}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--no-timestamp", action="store_true",
                        help="omit the '# generated' header line from written files")
    common.add_argument("-v", "--verbose", action="store_true")

    cfgp = argparse.ArgumentParser(add_help=False)
    cfgp.add_argument("--preset", choices=sorted(PRESETS), help="bundled experiment settings")
    cfgp.add_argument("--config", help="INI experiment config (applied on top of --preset)")
    cfgp.add_argument("--count", type=int, help="override the number of segments")

    parser = _Parser(prog="chaincast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common, cfgp], help="write a synthetic dataset file")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common, cfgp], help="train a chain and write a checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--history")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="roll a checkpoint forward")
    p.add_argument("checkpoint")
    p.add_argument("--algo", choices=["mw", "ew", "ml"], default="ml")
    p.add_argument("--m", type=int, default=75)
    p.add_argument("--p", type=int, default=75)
    p.add_argument("--policy", choices=[x.value for x in ro.ResetPolicy], default="zero")
    p.add_argument("--max-len", type=int, help="expanding-window cap")
    p.add_argument("--record", action="store_true", help="also write per-round state records")
    p.add_argument("--out")
    _add_signal_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", parents=[common], help="divergence between rollout algorithms")
    p.add_argument("checkpoint")
    p.add_argument("--m-list", type=_int_list, default=[25, 75])
    p.add_argument("--p", type=int, default=75)
    p.add_argument("--algos", default="mw,ml")
    p.add_argument("--policy", choices=[x.value for x in ro.ResetPolicy], default="zero")
    p.add_argument("--out-dir", default="compare")
    _add_signal_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("delta", parents=[common], help="shifted-difference traces and decay fits")
    p.add_argument("checkpoint")
    p.add_argument("--m", type=int, default=75)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--round", type=int, default=2, help="round j of the traced pair (j, j+1)")
    p.add_argument("--policy", choices=[x.value for x in ro.ResetPolicy], default="zero")
    p.add_argument("--log", action="store_true", help="add natural-log columns")
    p.add_argument("--include-c", action="store_true", help="include LSTM cell memory in the state")
    p.add_argument("--floor-eps", type=float, default=1e-12)
    p.add_argument("--out")
    _add_signal_flags(p)
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("bench", parents=[common], help="transformation counts, speed gain, timings")
    p.add_argument("--m", type=int, default=75)
    p.add_argument("--p", type=int, default=75)
    p.add_argument("--k-list", type=_int_list, default=[1, 3, 5, 7])
    p.add_argument("--checkpoint")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"chaincast: error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"chaincast: numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
