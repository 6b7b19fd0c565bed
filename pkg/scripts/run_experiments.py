"""Train (if needed), certify and summarise the toy and MNIST experiments.

    python scripts/run_experiments.py --only toy2d
    python scripts/run_experiments.py --mnist-subset 50
"""

import argparse
import sys
from pathlib import Path

from smoothcert.cli import main as smoothcert

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = {"toy2d": ROOT / "configs" / "toy2d_desk.json", "mnist": ROOT / "configs" / "mnist_desk.json"}
MODELS = {"toy2d": ROOT / "models" / "toy2d_s025.bin", "mnist": ROOT / "models" / "mnist_s025.bin"}


def run(argv):
    print("$ smoothcert " + " ".join(argv), flush=True)
    code = smoothcert(argv)
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--only", choices=sorted(CONFIGS))
    ap.add_argument("--mnist-subset", type=int, help="certify fewer than the configured 500 test images")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--outroot", default=str(ROOT / "results"))
    args = ap.parse_args()

    for dataset, config in CONFIGS.items():
        if args.only and dataset != args.only:
            continue
        model = MODELS[dataset]
        data_dir = str(ROOT / "data" / "mnist5k")
        if not model.exists():
            run(["train", "--config", str(config), "--data-dir", data_dir, "--out", str(model)])
        outdir = Path(args.outroot) / dataset
        flags = ["certify", "--config", str(config), "--model", str(model), "--data-dir", data_dir,
                 "--outdir", str(outdir), "--workers", str(args.workers)]
        if dataset == "mnist" and args.mnist_subset:
            flags += ["--subset", str(args.mnist_subset)]
        run(flags)
        run(["curve", "--certs", str(outdir), "--out", str(outdir / "curves.csv")])


if __name__ == "__main__":
    main()
