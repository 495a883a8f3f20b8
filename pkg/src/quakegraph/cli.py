"""Command-line entry point: ``quakegraph {synth,preprocess,train,eval,detect,sweep}``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import WindowDataset, group_picks, window_starts, windows_from_traces
from .evaluate import optimal_mdp, roc_curve, tpr_fpr_at_mdp
from .formats import (FormatError, WaveformContainer, fmt, iter_containers, load_config, parse_float_list,
                      read_container, read_picks, write_catalog, write_container, write_geometry, write_picks,
                      write_rows)
from .model import Architecture, CheckpointError, load_checkpoint, save_checkpoint
from .synth import event_picks, generate_catalog, generate_network, synth_waveforms
from .train import TrainConfig, grid_sweep, predict_windows, train

log = logging.getLogger("quakegraph")


class CliError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        for section in ("synth", "preprocess", "train"):
            cfg[section]["seed"] = args.seed
    if getattr(args, "window_s", None) is not None:
        cfg["preprocess"]["window_s"] = args.window_s
        cfg["stream"]["window_s"] = args.window_s
    if getattr(args, "stride_s", None) is not None:
        cfg["stream"]["stride_s"] = args.stride_s
    return cfg


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


def cmd_synth(args, cfg) -> None:
    s = cfg["synth"]
    out = _out_dir(args)
    geometry = generate_network(s["n_stations"], s["extent_km"], s["seed"])
    catalog = generate_catalog(s["n_events"], s["extent_km"], s["seed"] + 1,
                               min_gap_s=s["min_gap_s"], max_gap_s=s["max_gap_s"])
    duration = float(catalog.origin_time_s[-1] + s["max_gap_s"]) if len(catalog) else 60.0
    raw = synth_waveforms(geometry, catalog, duration, s["noise_std"], s["seed"] + 2,
                          sample_rate_hz=s["sample_rate_hz"], dtype=np.float32)
    write_geometry(out / "stations.csv", geometry)
    write_catalog(out / "catalog.csv", catalog)
    rows = []
    for i in range(len(catalog)):
        for sid, (tp, ts) in zip(geometry.station_ids, event_picks(geometry, catalog, i)):
            rows.append((sid, tp, ts))
    write_picks(out / "picks.csv", rows)
    write_container(out / "waveforms.qgw",
                    WaveformContainer(raw.traces, raw.sample_rate_hz, raw.start_time_s, geometry.station_ids))
    print(f"synth: {len(geometry)} stations, {len(catalog)} events, {duration:.1f} s -> {out}")


def cmd_preprocess(args, cfg) -> None:
    p = cfg["preprocess"]
    out = _out_dir(args)
    container = read_container(_require(args.waveforms, "waveform container"))
    picks = read_picks(_require(args.picks, "picks file"))
    events = group_picks(picks, container.station_ids, gap_s=p["window_s"])
    starts = window_starts(events, p["seed"], (p["lead_min_s"], p["lead_max_s"]))
    ds = windows_from_traces(container.traces, container.sample_rate_hz, container.start_time_s,
                             container.station_ids, events, starts, p["window_s"])
    n_test = p["n_test"]
    if not 0 < n_test < len(ds):
        raise CliError(f"config [preprocess] n_test={n_test} must be between 1 and {len(ds) - 1}")
    tr, te = ds.chronological_split(n_test)
    tr.save(out / "train.npz")
    te.save(out / "test.npz")
    print(f"preprocess: {len(tr)} training and {len(te)} test windows of shape {ds.windows.shape[1:]} -> {out}")


def _arch(cfg, n_stations: int, kind: str | None = None) -> Architecture:
    m = cfg["model"]
    return Architecture(n_stations=n_stations, hidden=m["hidden"], n_layers=m["n_layers"], cheb_k=m["cheb_k"],
                        dropout=m["dropout"], kind=kind or m["kind"])


def _train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(learning_rate=t["learning_rate"], batch_size=t["batch_size"], epochs=t["epochs"],
                       seed=t["seed"], augment=t["augment"], max_shift_fraction=t["max_shift_fraction"],
                       noise_mean=t["noise_mean"], pos_weight=t["pos_weight"])


def cmd_train(args, cfg) -> None:
    out = _out_dir(args)
    ds = WindowDataset.load(_require(args.dataset, "dataset"))
    arch = _arch(cfg, len(ds.station_ids), args.model)
    result = train(ds.windows, ds.labels, _train_config(cfg), arch)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / f"{arch.kind}.qgc"
    save_checkpoint(result.params, ckpt)
    write_rows(out / f"loss_{arch.kind}.csv", ["epoch", "loss"], enumerate(result.epoch_losses))
    print(f"train: {arch.kind} model, final loss {fmt(result.epoch_losses[-1]) if result.epoch_losses else 'n/a'}"
          f" -> {ckpt}")


def _report(name: str, scores, labels, mdps, out: Path) -> dict:
    curve = roc_curve(scores, labels)
    write_rows(out / f"roc_{name}.csv", ["threshold", "fpr", "tpr"],
               zip(curve.thresholds.tolist(), curve.fpr.tolist(), curve.tpr.tolist()))
    best = optimal_mdp(curve)
    rows = []
    print(f"[{name}] AUC {fmt(curve.auc)}")
    for mdp in mdps:
        r = tpr_fpr_at_mdp(scores, labels, mdp)
        rows.append({"mdp": mdp, "tpr": r.tpr, "fpr": r.fpr})
        print(f"[{name}] MDP {fmt(mdp)}: TPR {r.tpr} FPR {r.fpr}")
    print(f"[{name}] optimal MDP {fmt(best[0])} at FPR {fmt(best[1])} TPR {fmt(best[2])}")
    return {"auc": curve.auc, "mdp_table": rows,
            "optimal": {"mdp": best[0], "fpr": best[1], "tpr": best[2]}}


def cmd_eval(args, cfg) -> None:
    out = _out_dir(args)
    mdps = parse_float_list(cfg["eval"]["mdps"])
    if args.mdp is not None:
        mdps.append(args.mdp)
    summary = {}
    if args.scores:
        rows = np.loadtxt(_require(args.scores, "scores file"), delimiter=",", skiprows=1, ndmin=2)
        if rows.shape[1] != 2:
            raise CliError(f"{args.scores}: expected columns score,label")
        summary["scores"] = _report("scores", rows[:, 0], rows[:, 1].astype(int), mdps, out)
    else:
        if not args.dataset or not args.checkpoint:
            raise CliError("eval needs --dataset and --checkpoint (or --scores)")
        ds = WindowDataset.load(_require(args.dataset, "dataset"))
        models = [("proposed", args.checkpoint)]
        if args.baseline_checkpoint:
            models.append(("baseline", args.baseline_checkpoint))
        for name, path in models:
            params = load_checkpoint(_require(path, "checkpoint"))
            if params.arch.n_stations != len(ds.station_ids):
                raise CliError(f"checkpoint {path} expects {params.arch.n_stations} stations, "
                               f"dataset has {len(ds.station_ids)}")
            probs = predict_windows(params, ds.windows)
            summary[name] = _report(name, probs, ds.labels, mdps, out)
    (out / "eval_summary.json").write_text(json.dumps(summary, indent=2))


def cmd_detect(args, cfg) -> None:
    from .stream import StreamDetector

    params = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    st = cfg["stream"]
    with contextlib.ExitStack() as stack:
        if args.input == "-":
            chunks = iter_containers(sys.stdin.buffer, "<stdin>")
        else:
            fh = stack.enter_context(open(_require(args.input, "waveform container"), "rb"))
            chunks = iter_containers(fh, args.input)
        first = next(chunks, None)
        if first is None:
            raise CliError("detect: no waveform data")
        det = StreamDetector(params, first.station_ids, first.sample_rate_hz, st["window_s"], st["stride_s"],
                             first.start_time_s)
        if args.out == "-":
            dest = sys.stdout
        else:
            dest = stack.enter_context(open(_out_dir(args) / "detections.csv", "w"))

        def emit(rows):
            for r in rows:
                dest.write(f"{fmt(r.time_s)},{r.station_id},{fmt(r.probability)}\n")

        dest.write("time_s,station_id,probability\n")
        emit(det.push(first.traces))
        for c in chunks:
            if c.station_ids != first.station_ids or c.sample_rate_hz != first.sample_rate_hz:
                raise CliError("detect: chunk station list or sample rate changed mid-stream")
            emit(det.push(c.traces))
        emit(det.finish())


def cmd_sweep(args, cfg) -> None:
    out = _out_dir(args)
    ds = WindowDataset.load(_require(args.dataset, "dataset"))
    try:
        space = json.loads(Path(_require(args.space, "sweep space")).read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{args.space}: invalid JSON ({exc})") from None
    results = grid_sweep(space, ds.windows, ds.labels, _arch(cfg, len(ds.station_ids), args.model),
                         _train_config(cfg), k=args.folds, seed=cfg["train"]["seed"])
    (out / "sweep.json").write_text(json.dumps([r.to_record() for r in results], indent=2))
    best = results[0]
    print(f"sweep: best {best.settings} mean AUC {fmt(best.mean_auc)}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--checkpoint", help="model checkpoint path")
    common.add_argument("--window-s", dest="window_s", type=float, help="window length in seconds")
    common.add_argument("--stride-s", dest="stride_s", type=float, help="detection stride in seconds")
    common.add_argument("--mdp", type=float, help="extra minimum detection probability to report")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="quakegraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic network, catalog and record")
    p = sub.add_parser("preprocess", parents=[common], help="cut, preprocess and label event windows")
    p.add_argument("--waveforms", required=True)
    p.add_argument("--picks", required=True)
    p = sub.add_parser("train", parents=[common], help="train a detector")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=("slc", "baseline"))
    p = sub.add_parser("eval", parents=[common], help="ROC, AUC and MDP table")
    p.add_argument("--dataset")
    p.add_argument("--baseline-checkpoint", dest="baseline_checkpoint")
    p.add_argument("--scores", help="CSV of score,label to evaluate directly")
    p = sub.add_parser("detect", parents=[common], help="sliding-window detection on a record")
    p.add_argument("--input", required=True, help="waveform container, or - for concatenated containers on stdin")
    p.epilog = "detections go to OUT/detections.csv, or to stdout with --out -"
    p = sub.add_parser("sweep", parents=[common], help="cross-validated grid search")
    p.add_argument("--dataset", required=True)
    p.add_argument("--space", required=True, help="JSON object mapping knob -> list of values")
    p.add_argument("--model", choices=("slc", "baseline"))
    p.add_argument("--folds", type=int, default=5)
    return parser


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
            "detect": cmd_detect, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (CliError, FormatError, CheckpointError, ValueError, OSError) as exc:
        print(f"quakegraph {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
