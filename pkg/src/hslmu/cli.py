"""Command-line entry point: train, eval, sweep, report, fetch-data.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.  Every command is deterministic given its config and
data, except fetch-data (the only one that touches the network).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import metrics as activity_metrics
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, render_config
from .data import DataError, SequenceDataset, fetch_mnist, load_mnist_dir, make_task, write_demo_dataset
from .metrics import PopulationActivity, measured_snr, population_bitwidth
from .network import CellConfig, CellParams, HsLmuCell, count_states
from .quantizer import QuantizerState, hard_clip, init_residuals, lif_rate, quantize_step, relu
from .seeds import stream_rng
from .training import (
    NumericalFailure,
    TrainPlan,
    initialize_parameters,
    train_model,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def dataset_from_config(cfg: RunConfig) -> SequenceDataset:
    tr_img, tr_lab, te_img, te_lab = load_mnist_dir(cfg.data_dir)
    perm_seed = cfg.perm_seed
    if perm_seed is None:
        perm_seed = int(stream_rng(cfg.seed, "permutation").integers(2**31))
    return make_task(
        tr_img, tr_lab, te_img, te_lab,
        task=cfg.task,
        perm_seed=perm_seed,
        classes=cfg.classes,
        image_size=cfg.image_size,
        counts=(cfg.train_count, cfg.val_count, cfg.test_count),
    )


def cell_from_config(cfg: RunConfig, seq_len: int, n_classes: int) -> HsLmuCell:
    return HsLmuCell(
        CellConfig(
            n_hidden=cfg.n_hidden,
            memory_order=cfg.memory_order,
            input_dim=1,
            n_classes=n_classes,
            theta_bar=float(seq_len if cfg.theta_bar is None else cfg.theta_bar),
            tau_memory=cfg.tau_memory,
            tau_hidden=cfg.tau_hidden,
            tau_out=cfg.tau_out,
            f_hidden=lif_rate(),
            f_memory=hard_clip(),
        )
    )


def plan_from_config(cfg: RunConfig) -> TrainPlan:
    return TrainPlan(
        omega_hidden=(cfg.omega_high_hidden, cfg.omega_low_hidden),
        omega_memory=(cfg.omega_high_memory, cfg.omega_low_memory),
        interp_epochs=cfg.interp_epochs,
        fine_tune_patience=cfg.fine_tune_patience,
        max_epochs=cfg.max_epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.epsilon,
        l2_lambda=cfg.l2_lambda,
        grad_clip=cfg.grad_clip,
        bptt_chunk=cfg.bptt_chunk,
        seed=cfg.seed,
    )


def _params_meta(cfg: RunConfig, cell: HsLmuCell, epoch: int, omega_h: float, omega_m: float) -> dict:
    return {
        "task": cfg.task,
        "n_hidden": cell.config.n_hidden,
        "memory_order": cell.config.memory_order,
        "n_classes": cell.config.n_classes,
        "theta_bar": cell.config.theta_bar,
        "epoch": epoch,
        "omega_hidden": omega_h,
        "omega_memory": omega_m,
    }


def _save_params(path, params: CellParams, meta, moments=None) -> None:
    tensors = params.tensors()
    if moments is not None:
        tensors = dict(tensors)
        for name, m in moments.m.items():
            tensors[f"adam_m/{name}"] = m
        for name, v in moments.v.items():
            tensors[f"adam_v/{name}"] = v
        meta = dict(meta, adam_t=moments.t)
    save_checkpoint(path, tensors, meta)


def _params_from_checkpoint(tensors: dict, cell: HsLmuCell) -> CellParams:
    kwargs = {}
    for name in CellParams.TRAINABLE + CellParams.FROZEN:
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        kwargs[name] = tensors[name].astype(np.float64)
    params = CellParams(**kwargs)
    cfg = cell.config
    expect = {
        "W_x": (cfg.n_hidden, cfg.input_dim),
        "W_h": (cfg.n_hidden, cfg.n_hidden),
        "W_m": (cfg.n_hidden, cfg.memory_order),
        "W_out": (cfg.n_classes, cfg.n_hidden),
        "A_H": (cfg.memory_order, cfg.memory_order),
    }
    for name, shape in expect.items():
        if tuple(tensors[name].shape) != shape:
            raise CheckpointError(
                f"checkpoint tensor {name} has shape {tuple(tensors[name].shape)}, "
                f"config expects {shape}"
            )
    return params


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data = dataset_from_config(cfg)
    cell = cell_from_config(cfg, data.seq_len, data.n_classes)
    plan = plan_from_config(cfg)
    params = initialize_parameters(cell, stream_rng(cfg.seed, "init"))

    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.ini"), "w") as fh:
        fh.write(render_config(cfg))
    epoch_log = open(os.path.join(cfg.out_dir, "epochs.jsonl"), "w")
    timing_log = open(os.path.join(cfg.out_dir, "timing.log"), "w")
    t_prev = time.monotonic()

    def on_epoch(stats):
        nonlocal t_prev
        record = {
            "epoch": stats.epoch,
            "omega_h": stats.omega_h,
            "omega_m": stats.omega_m,
            "train_loss": stats.train_loss,
            "val_loss": stats.val_loss,
            "val_accuracy": stats.val_accuracy,
        }
        epoch_log.write(json.dumps(record, sort_keys=True) + "\n")
        epoch_log.flush()
        now = time.monotonic()
        timing_log.write(f"epoch {stats.epoch} wall_seconds {now - t_prev:.3f}\n")
        timing_log.flush()
        t_prev = now
        print(
            f"epoch {stats.epoch:3d}  omega_h={stats.omega_h:9.3f}  omega_m={stats.omega_m:9.3f}  "
            f"train_loss={stats.train_loss:.4f}  val_loss={stats.val_loss:.4f}  "
            f"val_acc={stats.val_accuracy:.4f}"
        )

    try:
        result = train_model(
            cell, params,
            (data.X_train, data.y_train),
            (data.X_val, data.y_val),
            plan,
            shuffle_rng=stream_rng(cfg.seed, "shuffle"),
            residual_rng=stream_rng(cfg.seed, "residuals"),
            on_epoch=on_epoch,
        )
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.last_good is not None:
            path = os.path.join(cfg.out_dir, "last_good.ckpt")
            _save_params(path, exc.last_good, _params_meta(cfg, cell, -1, math.nan, math.nan))
            print(f"last finite parameters saved to {path}", file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        epoch_log.close()
        timing_log.close()

    best_meta = _params_meta(
        cfg, cell, result.best_epoch, plan.omega_hidden[1], plan.omega_memory[1]
    )
    _save_params(os.path.join(cfg.out_dir, "best.ckpt"), result.best_params, best_meta)
    final_epoch = len(result.history) - 1
    final_meta = _params_meta(
        cfg, cell, final_epoch,
        result.history[-1].omega_h, result.history[-1].omega_m,
    )
    _save_params(
        os.path.join(cfg.out_dir, "final.ckpt"), result.final_params, final_meta,
        moments=result.adam,
    )
    print(
        f"done: best epoch {result.best_epoch} (val_loss={result.best_val_loss:.4f}); "
        f"checkpoints in {cfg.out_dir}"
    )
    return EXIT_OK


def _eval_metrics(cell: HsLmuCell, params: CellParams, X, y, omega_h, omega_m, rng, batch=200):
    """Accuracy plus activity metrics, accumulated batch by batch."""
    correct = 0
    k_min = {"hidden": np.inf, "memory": np.inf}
    k_max = {"hidden": -np.inf, "memory": -np.inf}
    sig_sum = {"hidden": 0.0, "memory": 0.0}
    zero_sum = {"hidden": 0, "memory": 0}
    count = {"hidden": 0, "memory": 0}
    for start in range(0, len(y), batch):
        Xc, yc = X[start : start + batch], y[start : start + batch]
        logits, rec = cell.forward(params, Xc, omega_h, omega_m, rng, record=True)
        correct += int((logits.argmax(axis=1) == yc).sum())
        for name, k in (("hidden", rec.k_h), ("memory", rec.k_m)):
            k_min[name] = min(k_min[name], float(k.min()))
            k_max[name] = max(k_max[name], float(k.max()))
            sig_sum[name] += float(activity_metrics.significant_bits(k).sum())
            zero_sum[name] += int((k == 0).sum())
            count[name] += k.size

    n, d = cell.config.n_hidden, cell.config.memory_order
    sizes = {"hidden": n, "memory": d}
    bits = {}
    for name in ("hidden", "memory"):
        span = PopulationActivity(np.array([[k_min[name]], [k_max[name]]]), omega=1.0)
        bits[name], _ = population_bitwidth(span)
    total_neurons = n + d
    return {
        "accuracy": correct / len(y),
        "bitwidth_hidden": bits["hidden"],
        "bitwidth_memory": bits["memory"],
        "bitwidth_avg": (bits["hidden"] * n + bits["memory"] * d) / total_neurons,
        "significant_bits_avg": (
            sig_sum["hidden"] / count["hidden"] * n + sig_sum["memory"] / count["memory"] * d
        )
        / total_neurons,
        "zero_fraction_hidden": zero_sum["hidden"] / count["hidden"],
        "zero_fraction_memory": zero_sum["memory"] / count["memory"],
        "spike_fraction_hidden": 1 - zero_sum["hidden"] / count["hidden"],
        "spike_fraction_memory": 1 - zero_sum["memory"] / count["memory"],
        "state_variables": count_states(cell.config),
        "hidden_count_range": [k_min["hidden"], k_max["hidden"]],
        "memory_count_range": [k_min["memory"], k_max["memory"]],
        "population_sizes": sizes,
    }


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    tensors, meta = load_checkpoint(args.checkpoint)
    data = dataset_from_config(cfg)
    cell = cell_from_config(cfg, data.seq_len, data.n_classes)
    params = _params_from_checkpoint(tensors, cell)
    X, y = data.split(args.split)

    omega_h = float(meta.get("omega_hidden", cfg.omega_low_hidden))
    omega_m = float(meta.get("omega_memory", cfg.omega_low_memory))
    report = _eval_metrics(
        cell, params, X, y, omega_h, omega_m, stream_rng(cfg.seed, "eval")
    )
    report["split"] = args.split
    report["omega_hidden"] = omega_h
    report["omega_memory"] = omega_m

    with open(args.checkpoint, "rb") as fh:
        ck_digest = hashlib.sha256(fh.read()).hexdigest()
    run_id = hashlib.sha256(
        (render_config(cfg) + ck_digest + args.split).encode()
    ).hexdigest()[:12]
    report["run_id"] = run_id

    for key in (
        "accuracy", "bitwidth_avg", "significant_bits_avg",
        "zero_fraction_memory", "spike_fraction_hidden", "state_variables",
    ):
        print(f"{key:24s} {report[key]}")

    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "reports.jsonl"), "a") as fh:
        fh.write(json.dumps(report, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    data = dataset_from_config(cfg)
    x = data.X_test[0].astype(float)  # one digit row-scan
    ideal = relu().value(x)

    if args.omegas:
        try:
            omegas = [float(tok) for tok in args.omegas.split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse --omegas {args.omegas!r}") from None
    else:
        omegas = [float(2**m - 1) for m in range(1, 9)] + [float(2**32)]

    rng = stream_rng(cfg.seed, "eval")
    tau = cfg.tau_hidden
    os.makedirs(cfg.out_dir, exist_ok=True)
    traces = {}
    rows = []
    for omega in omegas:
        state = QuantizerState(v=init_residuals(1, rng), omega=omega)
        out = np.empty_like(ideal)
        for t, a in enumerate(ideal):
            state, q = quantize_step(state, a)
            out[t] = q[0]
        snr = measured_snr(ideal, out, tau) if len(ideal) > 5 * tau else math.nan
        traces[f"omega_{omega:g}"] = out
        rows.append({"omega": omega, "snr": snr})
        print(f"omega {omega:14.0f}  snr {snr:14.4f}  levels {len(np.unique(out))}")

    np.savez(os.path.join(cfg.out_dir, "sweep_traces.npz"), ideal=ideal, **traces)
    with open(os.path.join(cfg.out_dir, "sweep.jsonl"), "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"traces and SNR table written to {cfg.out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = args.run_dir
    epochs = os.path.join(run_dir, "epochs.jsonl")
    reports = os.path.join(run_dir, "reports.jsonl")
    if not os.path.exists(epochs) and not os.path.exists(reports):
        raise DataError(f"no epochs.jsonl or reports.jsonl under {run_dir}")
    if os.path.exists(epochs):
        print(f"== training epochs ({epochs})")
        with open(epochs) as fh:
            for line in fh:
                r = json.loads(line)
                print(
                    f"  epoch {r['epoch']:3d}  omega_h={r['omega_h']:9.3f}  "
                    f"omega_m={r['omega_m']:9.3f}  train={r['train_loss']:.4f}  "
                    f"val={r['val_loss']:.4f}  acc={r['val_accuracy']:.4f}"
                )
    if os.path.exists(reports):
        print(f"== evaluation reports ({reports})")
        with open(reports) as fh:
            for line in fh:
                r = json.loads(line)
                print(
                    f"  run {r['run_id']}  split={r['split']:5s}  acc={r['accuracy']:.4f}  "
                    f"bits={r['bitwidth_avg']:.2f}  sig_bits={r['significant_bits_avg']:.3f}  "
                    f"states={r['state_variables']}"
                )
    return EXIT_OK


def cmd_fetch_data(args) -> int:
    fetch_mnist(args.out)
    print(f"dataset archives verified in {args.out}")
    return EXIT_OK


def cmd_make_demo_data(args) -> int:
    write_demo_dataset(args.out, train_count=args.train_count, test_count=args.test_count,
                       seed=args.seed)
    print(f"synthetic digit dataset written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hslmu",
        description="Train and evaluate hybrid-spiking memory networks with "
        "temporally-diffused activation quantization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the resolution sweep + fine-tuning")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and activity metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="quantizer traces and SNR across resolutions")
    p.add_argument("--config", required=True)
    p.add_argument("--omegas", default=None, help="comma list; default 2^m-1 for m=1..8 plus 2^32")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize logs and reports of a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fetch-data", help="download and verify the dataset archives")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fetch_data)

    p = sub.add_parser("make-demo-data", help="write a synthetic offline stand-in dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train-count", type=int, default=2400)
    p.add_argument("--test-count", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_demo_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
