"""Command-line entry point: ``smoothcert train|certify|curve|region2d``.

Exit status is 0 on success, 2 for a bad configuration and 3 for unreadable
or inconsistent data.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .classifier import accuracy, save_model, train
from .errors import ConfigError, DimError, DimMismatch, FormatError, GridMismatch, MismatchError

EXIT_CONFIG = 2
EXIT_DATA = 3
DATA_ERRORS = (FileNotFoundError, IsADirectoryError, FormatError, MismatchError, DimError, DimMismatch)


def _methods(text: str) -> list[str]:
    return [m.strip().upper() for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smoothcert", description="Certify classifiers with optimised Gaussian smoothing.")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
        p.add_argument("--dataset", choices=("mnist", "toy2d"))
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--sigma", dest="sigma_train", type=float)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a base classifier with Gaussian augmentation")
    run_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("certify", help="certify a test subset with the chosen methods")
    run_flags(p)
    p.add_argument("--model", dest="model_path")
    p.add_argument("--methods", type=_methods)
    p.add_argument("--profile", choices=("desk", "paper"))
    p.add_argument("--subset", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--outdir")

    p = sub.add_parser("curve", help="certified-accuracy curves from a certify output directory")
    p.add_argument("--certs", required=True, help="directory holding certs.csv, or the file itself")
    p.add_argument("--grid-max", type=float, default=6.0)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--out", required=True)

    p = sub.add_parser("region2d", help="boundary polyline of a 2D certified region")
    p.add_argument("--cert", required=True, help="certificate JSON written by certify")
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--out", required=True)
    return ap


def load_run_config(args) -> harness.RunConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    for key in ("dataset", "data_dir", "sigma_train", "seed", "model_path", "methods", "profile",
                "subset", "workers", "outdir"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    return harness.RunConfig.from_json(doc)


def cmd_train(args) -> None:
    cfg = load_run_config(args)
    tcfg = cfg.train
    if args.epochs is not None:
        tcfg.epochs = args.epochs
        tcfg.__post_init__()
    train_set, test_set = harness.load_datasets(cfg)
    model = train(train_set.x, train_set.y, tcfg, train_set.num_classes)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out)
    print(f"train accuracy {accuracy(model, train_set.x, train_set.y):.4f}, "
          f"test accuracy {accuracy(model, test_set.x, test_set.y):.4f}; saved {args.out}")


def cmd_certify(args) -> None:
    cfg = load_run_config(args)
    certs = harness.run_certification(cfg)
    out = harness.write_outputs(certs, cfg)
    by_method: dict = {}
    for c in certs:
        by_method.setdefault(c.method, []).append(c)
    for m, cs in by_method.items():
        n_cert = sum(c.correct for c in cs)
        print(f"{m:6s} certified-correct {n_cert}/{len(cs)}  mean proxy radius {harness.mean_proxy_radius(cs):.4f}")
    print(f"wrote {out / 'certs.csv'}")


def cmd_curve(args) -> None:
    src = Path(args.certs)
    table = src / "certs.csv" if src.is_dir() else src
    rows = harness.read_certificates_csv(table)
    sigma = float("nan")
    cfg_path = table.parent / "config.json"
    if cfg_path.exists():
        sigma = float(json.loads(cfg_path.read_text()).get("sigma_train", sigma))
    grid = harness.radius_grid(args.grid_max, args.grid_step)
    curves = harness.curves_by_method(rows, grid, sigma)
    by_method: dict = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(r)
    summary = harness.compare_methods(curves, by_method)
    harness.write_curves_csv(curves, args.out)
    summary_path = Path(args.out).with_suffix(".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for m, entry in summary["methods"].items():
        print(f"{m:6s} clean {entry['clean_accuracy']:.3f}  auc {entry['auc']:.4f}  "
              f"mean proxy {entry.get('mean_proxy_radius', float('nan')):.4f}")
    print(f"wrote {args.out} and {summary_path}")


def cmd_region2d(args) -> None:
    cert = harness.read_certificate_json(args.cert)
    harness.write_region_csv(harness.export_region_2d(cert, args.points), args.out)
    print(f"wrote {args.points} boundary points to {args.out}")


COMMANDS = {"train": cmd_train, "certify": cmd_certify, "curve": cmd_curve, "region2d": cmd_region2d}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (ConfigError, GridMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
