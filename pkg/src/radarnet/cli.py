"""Command-line front end: generate, plot, train, eval, cv, predict, config.

Every subcommand is reproducible under its seeds; artifacts carry no
timestamps.  Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset as ds_mod
from . import evaluation, network
from .config import (
    COUNT_PRESETS,
    QUOTA_PRESETS,
    RunConfig,
    apply_count_preset,
    apply_quota_preset,
    load_config,
)
from .radar import CLASS_ORDER
from .spectrogram import export_pgm, mean_normalize, signal_to_tensor


def _parse_counts(text):
    counts = {}
    for part in text.split(","):
        label, _, num = part.partition("=")
        counts[label.strip().upper()] = int(num)
    return counts


def _load_run_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "counts", None):
        cfg.counts_per_class = _parse_counts(args.counts)
    if getattr(args, "count_preset", None):
        apply_count_preset(cfg, args.count_preset)
    if getattr(args, "quota_preset", None):
        apply_quota_preset(cfg, args.quota_preset)
    for flag, attr in [
        ("seed", "base_seed"),
        ("split_seed", "split_seed"),
        ("folds", "folds"),
        ("train_per_class", "train_per_class"),
        ("val_per_class", "val_per_class"),
        ("target_width", "target_width"),
        ("net_preset", "preset"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    for flag in ["learning_rate", "momentum", "weight_decay", "epochs", "train_seed", "dropout_rate"]:
        value = getattr(args, flag, None)
        if value is not None:
            attr = "seed" if flag == "train_seed" else flag
            setattr(cfg.train, attr, value)
    cfg.train = network.TrainConfig(**cfg.train.to_dict())   # re-validate
    return cfg


def cmd_generate(args) -> int:
    cfg = _load_run_config(args)
    if args.freq_range:
        lo, _, hi = args.freq_range.partition(":")
        cfg.freq_range = (int(lo), int(hi))
    ds = ds_mod.generate_dataset(
        cfg.counts_per_class,
        cfg.base_seed,
        cfg.profiles,
        cfg.radar,
        args.out_dir,
        target_width=cfg.target_width,
        freq_range=cfg.freq_range,
        workers=args.workers,
        keep_signals=args.keep_signals,
    )
    print(f"wrote {len(ds)} samples to {args.out_dir}")
    for label, count in sorted(ds.class_counts.items()):
        print(f"  class {label}: {count}")
    print(f"tensor shape: {ds.tensor_shape}, radar hash {ds.radar_hash}")
    return 0


def _plot_channels(values_by_name, out_path, log_scale):
    out_path = Path(out_path)
    names = list(values_by_name)
    for name, matrix in values_by_name.items():
        if len(names) == 1:
            target = out_path
        else:
            target = out_path.with_suffix(f".{name}{out_path.suffix or '.pgm'}")
        target.write_bytes(export_pgm(matrix, log_scale=log_scale))
        print(f"wrote {target}")


def cmd_plot(args) -> int:
    cfg = _load_run_config(args)
    path = Path(args.input)
    wanted = [c.strip() for c in args.channels.split(",")]
    channel_index = {"up": 0, "down": 1, "avg": 2, "0": 0, "1": 1, "2": 2}
    for c in wanted:
        if c not in channel_index:
            raise ValueError(f"unknown channel {c!r}; pick from up, down, avg")
    if path.suffix == ".rbs":
        sig = ds_mod.load_signal(path)
        tensor = signal_to_tensor(
            sig, cfg.radar, cfg.target_width,
            allow_crop=args.crop, freq_range=cfg.freq_range,
        )
    else:
        tensor = ds_mod.load_tensor(path)
    plots = {c: tensor.values[channel_index[c]] for c in wanted}
    _plot_channels(plots, args.output, args.log)
    return 0


def _model_paths(weights_path):
    weights_path = Path(weights_path)
    return weights_path, weights_path.with_suffix(".mean.rdt"), weights_path.with_suffix(".meta.json")


def _save_model(weights_path, net, mean_tensor, cfg: RunConfig):
    wpath, mpath, metapath = _model_paths(weights_path)
    network.save_weights(net, wpath)
    ds_mod.save_tensor(mean_tensor, mpath)
    meta = {
        "preset": cfg.preset,
        "input_shape": list(net.input_shape),
        "target_width": cfg.target_width,
        "freq_range": list(cfg.freq_range) if cfg.freq_range else None,
        "radar": cfg.radar.to_dict(),
        "class_order": list(CLASS_ORDER),
    }
    metapath.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    ds = ds_mod.load_dataset(args.data)
    folds = ds_mod.stratified_fold_split(
        ds, cfg.folds, cfg.train_per_class, cfg.val_per_class, cfg.split_seed
    )
    fold = folds[args.fold]
    init = None
    if args.init_weights:
        init = args.init_weights

    # same per-fold seeding as cross_validate, so a standalone fold-k train
    # reproduces the cv fold-k model bit for bit
    trained = evaluation.train_fold(
        ds, fold, cfg.train, preset=cfg.preset,
        net_seed=cfg.train.seed + fold.fold_index,
        init_weights=init, reinit_fc=args.reinit_fc,
    )
    _save_model(args.output, trained.net, trained.mean_tensor, cfg)
    history_path = Path(args.output).with_suffix(".history.json")
    history_path.write_text(
        json.dumps(
            {
                "fold": fold.fold_index,
                "best_epoch": trained.best_epoch,
                "epochs": [
                    {"epoch": h.epoch, "train_loss": h.train_loss, "val_accuracy": h.val_accuracy}
                    for h in trained.history
                ],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    best = trained.history[trained.best_epoch - 1].val_accuracy if trained.history else float("nan")
    print(f"fold {fold.fold_index}: best epoch {trained.best_epoch}, val accuracy {best:.4f}")
    print(f"wrote {args.output}")
    return 0


def _load_model(weights_path, cfg: RunConfig):
    wpath, mpath, metapath = _model_paths(weights_path)
    if not mpath.exists():
        raise FileNotFoundError(f"mean tensor {mpath} not found beside the weights")
    meta = json.loads(metapath.read_text(encoding="utf-8")) if metapath.exists() else {}
    preset = meta.get("preset", cfg.preset)
    mean = ds_mod.load_tensor(mpath)
    net = network.build_network(preset, input_shape=mean.values.shape)
    network.load_weights(net, wpath)
    if "radar" in meta:
        from .radar import RadarParams

        cfg.radar = RadarParams.from_dict(meta["radar"])
    if "target_width" in meta:
        cfg.target_width = meta["target_width"]
    if meta.get("freq_range"):
        cfg.freq_range = tuple(meta["freq_range"])
    return net, mean


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    ds = ds_mod.load_dataset(args.data)
    net, mean = _load_model(args.weights, cfg)
    if args.all:
        ids = [r.sample_id for r in ds.records]
    else:
        folds = ds_mod.stratified_fold_split(
            ds, cfg.folds, cfg.train_per_class, cfg.val_per_class, cfg.split_seed
        )
        ids = list(folds[args.fold].test_ids)
    tensors, labels = [], []
    for sid in ids:
        t = mean_normalize(ds.load(sid), mean)
        tensors.append(t)
        labels.append(t.label)
    matrix = evaluation.evaluate(net, tensors, labels)
    print(f"samples: {matrix.total}  accuracy: {matrix.accuracy:.4f}")
    print("rows=true, cols=predicted, order " + " ".join(CLASS_ORDER))
    print(matrix.counts)
    if args.output:
        Path(args.output).write_text(
            json.dumps(
                {
                    "accuracy": matrix.accuracy,
                    "counts": matrix.counts.tolist(),
                    "row_rates": matrix.row_rates.tolist(),
                    "class_order": list(CLASS_ORDER),
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
        print(f"wrote {args.output}")
    return 0


def cmd_cv(args) -> int:
    cfg = _load_run_config(args)
    ds = ds_mod.load_dataset(args.data)
    report = evaluation.cross_validate(
        ds,
        k=cfg.folds,
        train_per_class=cfg.train_per_class,
        val_per_class=cfg.val_per_class,
        cfg=cfg.train,
        split_seed=cfg.split_seed,
        preset=cfg.preset,
        report_path=args.output,
        progress=lambda i, acc: print(f"fold {i}: accuracy {acc:.4f}"),
    )
    print(f"mean accuracy over {cfg.folds} folds: {report.mean_accuracy:.4f}")
    for label, acc in report.per_class_accuracy.items():
        print(f"  class {label}: {acc:.4f}")
    if args.output:
        print(f"wrote {args.output}")
    if args.matrix_pgm:
        Path(args.matrix_pgm).write_bytes(export_pgm(report.mean_row_rates))
        print(f"wrote {args.matrix_pgm}")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_run_config(args)
    net, mean = _load_model(args.weights, cfg)
    path = Path(args.input)
    if path.suffix == ".rbs":
        sig = ds_mod.load_signal(path)
        tensor = signal_to_tensor(sig, cfg.radar, cfg.target_width, freq_range=cfg.freq_range)
    else:
        tensor = ds_mod.load_tensor(path)
    tensor = mean_normalize(tensor, mean)
    label, scores = network.predict(net, tensor)
    print(f"predicted class: {label.value}")
    for i, c in enumerate(CLASS_ORDER):
        print(f"  {c}: {scores[i]:.6f}")
    return 0


def cmd_config(args) -> int:
    cfg = _load_run_config(args)
    if args.dump:
        sys.stdout.write(cfg.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radarnet",
        description="FM-CW radar vehicle classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flag(p):
        p.add_argument("--config", help="JSON run-config file; flags override its values")

    p = sub.add_parser("generate", help="simulate and persist a labeled dataset")
    add_config_flag(p)
    p.add_argument("-o", "--out-dir", required=True, help="dataset directory to create")
    p.add_argument("--preset", dest="count_preset", choices=sorted(COUNT_PRESETS),
                   help="per-class sample counts preset")
    p.add_argument("--counts", help="explicit counts, e.g. A=100,B=50")
    p.add_argument("--seed", type=int, help="generation base seed")
    p.add_argument("--target-width", type=int, dest="target_width")
    p.add_argument("--freq-range", dest="freq_range",
                   help="crop frequency bins to LO:HI (e.g. 0:227 for square inputs)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--keep-signals", action="store_true",
                   help="also write raw beat signals (.rbs)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("plot", help="render spectrogram channels as PGM images")
    add_config_flag(p)
    p.add_argument("input", help=".rdt tensor or .rbs beat-signal file")
    p.add_argument("-o", "--output", required=True, help="output PGM path")
    p.add_argument("--channels", default="avg", help="comma list of up,down,avg")
    p.add_argument("--log", action="store_true", help="20*log10 scaling before the pixel map")
    p.add_argument("--crop", action="store_true", help="crop overlong signals to the target width")
    p.add_argument("--target-width", type=int, dest="target_width")
    p.set_defaults(func=cmd_plot)

    def add_split_flags(p):
        p.add_argument("--folds", type=int)
        p.add_argument("--split-seed", type=int, dest="split_seed")
        p.add_argument("--train-per-class", type=int, dest="train_per_class")
        p.add_argument("--val-per-class", type=int, dest="val_per_class")
        p.add_argument("--preset", choices=sorted(QUOTA_PRESETS), dest="quota_preset",
                       help="per-class train/val quota preset")

    def add_train_flags(p):
        p.add_argument("--lr", type=float, dest="learning_rate")
        p.add_argument("--momentum", type=float)
        p.add_argument("--weight-decay", type=float, dest="weight_decay")
        p.add_argument("--epochs", type=int)
        p.add_argument("--train-seed", type=int, dest="train_seed")
        p.add_argument("--dropout", type=float, dest="dropout_rate")
        p.add_argument("--net-preset", choices=network.PRESETS, dest="net_preset")

    p = sub.add_parser("train", help="train one fold and save weights + mean tensor")
    add_config_flag(p)
    p.add_argument("-d", "--data", required=True, help="dataset directory")
    p.add_argument("-o", "--output", required=True, help="weights file (.rdw) to write")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--init-weights", help="warm-start from an existing .rdw")
    p.add_argument("--reinit-fc", action="store_true",
                   help="with --init-weights, keep fully connected layers randomly initialized")
    add_split_flags(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved weights on a fold's test split")
    add_config_flag(p)
    p.add_argument("-d", "--data", required=True)
    p.add_argument("-w", "--weights", required=True)
    p.add_argument("-o", "--output", help="report JSON path")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--all", action="store_true", help="evaluate every sample instead of a test split")
    add_split_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation with a report")
    add_config_flag(p)
    p.add_argument("-d", "--data", required=True)
    p.add_argument("-o", "--output", help="report JSON path")
    p.add_argument("--matrix-pgm", help="render the mean row-normalized matrix")
    add_split_flags(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="classify one tensor or raw beat signal")
    add_config_flag(p)
    p.add_argument("-w", "--weights", required=True)
    p.add_argument("input", help=".rdt tensor or .rbs beat-signal file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("config", help="inspect the effective configuration")
    add_config_flag(p)
    p.add_argument("--dump", action="store_true", help="print the effective config as JSON")
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, IndexError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
