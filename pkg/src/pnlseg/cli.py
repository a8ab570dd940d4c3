"""Command-line entry point.

Subcommands: gen-data, train, eval, score-pseudolabels, sweep-r, report.
Exit codes: 0 success, 2 config error, 3 numerical divergence, 4 IO error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics as metrics_mod
from . import plots
from .config import RunConfig, apply_ablations, make_run_config
from .core import load_dataset
from .errors import ConfigError, DataError, DivergenceError
from .model import ReferenceNet
from .neighborhood import sample_neighborhood_mask
from .psm import score_batch
from .synthdata import GenConfig, generate, multi_blob_preset
from .trainer import run as run_training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _str2bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def _add_dataclass_args(parser, cls, skip=()):
    """One CLI flag per config field, so any key is overridable as --key value."""
    for f in fields(cls):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        t = str(f.type)
        if "bool" in t:
            parser.add_argument(flag, dest=f.name, type=_str2bool, default=None, metavar="BOOL")
        elif "int" in t:
            parser.add_argument(flag, dest=f.name, type=int, default=None)
        elif "float" in t:
            parser.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            parser.add_argument(flag, dest=f.name, type=str, default=None)


def _collected_overrides(args, cls) -> dict:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pnlseg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic train/test dataset pair")
    g.add_argument("--out", required=True, help="output root; writes <out>/train and <out>/test")
    g.add_argument("--test-count", type=int, default=100)
    g.add_argument("--preset", choices=["single", "multi"], default="single")
    _add_dataclass_args(g, GenConfig)

    t = sub.add_parser("train", help="run the full training procedure")
    t.add_argument("--config", default=None, help="JSON config file")
    t.add_argument("--ablate", default="", help="comma list from pns,psm,pnmxp,pvrmxp")
    _add_dataclass_args(t, RunConfig)

    e = sub.add_parser("eval", help="evaluate saved teacher weights on a test set")
    e.add_argument("--weights", required=True, help="teacher_final.pt from a run")
    e.add_argument("--data", required=True, help="test dataset directory")
    e.add_argument("--out", required=True, help="directory for report.json/report.csv")
    e.add_argument("--average", choices=["micro", "macro"], default="micro")

    s = sub.add_parser("score-pseudolabels", help="score prediction maps against point-neighborhoods")
    s.add_argument("--preds", required=True, help="directory of <id>.npy probability maps")
    s.add_argument("--data", required=True, help="dataset directory (points.json)")
    s.add_argument("--out", required=True)
    s.add_argument("--radius", type=int, default=20)
    s.add_argument("--variant", choices=["count", "prob_sum"], default="count")
    s.add_argument("--threshold", type=float, default=0.5)

    w = sub.add_parser("sweep-r", help="train/evaluate across neighborhood radii")
    w.add_argument("--config", default=None)
    w.add_argument("--radii", default="1,3,10,20,40")
    w.add_argument("--ablate", default="")
    _add_dataclass_args(w, RunConfig, skip=("radius",))

    r = sub.add_parser("report", help="render plots from run metrics")
    r.add_argument("--runs", nargs="+", required=True,
                   help="run directories (label=path or bare path)")
    r.add_argument("--out", required=True)
    return p


def cmd_gen_data(args) -> int:
    overrides = _collected_overrides(args, GenConfig)
    if args.preset == "multi":
        cfg = multi_blob_preset(**overrides)
    else:
        cfg = GenConfig(**overrides)
    cfg.validate()
    out = Path(args.out)
    generate(cfg, out / "train")
    # evaluation split: every sample fully labeled, disjoint seed lineage
    test_cfg = replace(cfg, count=args.test_count, d1_fraction=1.0, seed=cfg.seed + (1 << 20))
    generate(test_cfg, out / "test")
    print(f"dataset written to {out} (train: {cfg.count}, test: {args.test_count})")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = _collected_overrides(args, RunConfig)
    cfg = make_run_config(args.config, overrides)
    cfg = apply_ablations(cfg, args.ablate)
    result = run_training(cfg)
    print(f"run artifacts in {result.out_dir}")
    if result.report is not None:
        print(f"test mIoU {result.report.miou:.2f}  dice {result.report.dice:.2f}")
    return EXIT_OK


def _load_teacher(weights_path):
    payload = torch.load(weights_path, weights_only=False)
    model = ReferenceNet(in_channels=int(payload.get("in_channels", 1)))
    model.load_parameter_vector(payload["teacher"])
    return model


def cmd_eval(args) -> int:
    model = _load_teacher(args.weights)
    samples = load_dataset(args.data)
    report = metrics_mod.evaluate(model, samples, average=args.average)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    with open(out / "report.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        names = ["miou", "pa", "recall", "precision", "dice"]
        wr.writerow(names)
        wr.writerow([repr(getattr(report, n)) for n in names])
    print(report.to_json())
    return EXIT_OK


def cmd_score_pseudolabels(args) -> int:
    data = Path(args.data)
    points_path = data / "points.json"
    if not points_path.exists():
        raise DataError(f"missing points.json under {data}")
    points = json.loads(points_path.read_text())
    preds_dir = Path(args.preds)
    ids = sorted(p.stem for p in preds_dir.glob("*.npy"))
    if not ids:
        raise DataError(f"no .npy prediction maps under {preds_dir}")

    from .core import PointAnnotation
    from .neighborhood import make_neighborhood_mask

    probs_list, masks = [], []
    for sid in ids:
        if sid not in points:
            raise DataError(f"prediction {sid} has no point annotation")
        probs = np.load(preds_dir / f"{sid}.npy")
        h, w = probs.shape
        pa = PointAnnotation(tuple(map(tuple, points[sid])))
        masks.append(make_neighborhood_mask(pa, args.radius, h, w))
        probs_list.append(probs)
    scores, summary = score_batch(probs_list, masks, variant=args.variant,
                                  threshold=args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scores.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "score"])
        for sid, sc in zip(ids, scores):
            wr.writerow([sid, repr(sc)])
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_sweep_r(args) -> int:
    try:
        radii = [int(r) for r in args.radii.split(",") if r.strip()]
    except ValueError as e:
        raise ConfigError(f"bad radius list {args.radii!r}") from e
    if not radii:
        raise ConfigError("empty radius list")
    overrides = _collected_overrides(args, RunConfig)
    base = make_run_config(args.config, overrides)
    base = apply_ablations(base, args.ablate)
    if not base.test_data:
        raise ConfigError("sweep-r needs test_data to compare runs")

    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for radius in radii:
        cfg = replace(base, radius=radius, out=str(out / f"R{radius}"))
        result = run_training(cfg)
        rep = result.report
        rows.append({
            "radius": radius, "miou": rep.miou, "pa": rep.pa,
            "recall": rep.recall, "precision": rep.precision, "dice": rep.dice,
        })
        print(f"R={radius}: mIoU {rep.miou:.2f}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["radius", "miou", "pa", "recall", "precision", "dice"])
        wr.writeheader()
        for row in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    plots.plot_radius_sweep([r["radius"] for r in rows], [r["miou"] for r in rows],
                            out / "sweep_miou.png")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows_by_label, miou_by_label = {}, {}
    for spec_ in args.runs:
        label, _, path = spec_.rpartition("=")
        path = Path(path)
        label = label or path.name
        rows_by_label[label] = plots.read_metrics_csv(path / "metrics.csv")
        report_path = path / "report.json"
        if report_path.exists():
            miou_by_label[label] = json.loads(report_path.read_text()).get("miou")

    first = next(iter(rows_by_label))
    plots.plot_loss_curves(rows_by_label[first], out / "loss_curves.png")
    plots.plot_containment(rows_by_label, out / "containment.png")
    if miou_by_label:
        plots.plot_ablation_bars(miou_by_label, out / "ablation_bars.png")
    print(f"plots written to {out}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "score-pseudolabels": cmd_score_pseudolabels,
    "sweep-r": cmd_sweep_r,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
