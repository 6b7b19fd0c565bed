"""Certified regions of every method for a few toy2d test points.

Writes the test set, the certificates and one boundary polyline per
(input, method) as CSV, ready for any plotting tool.
"""

import argparse
from pathlib import Path

from smoothcert import harness
from smoothcert.classifier import load_model
from smoothcert.data import export_csv

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default=str(ROOT / "models" / "toy2d_s025.bin"))
    ap.add_argument("--inputs", type=int, default=5)
    ap.add_argument("--points", type=int, default=128)
    ap.add_argument("--out", default=str(ROOT / "results" / "regions"))
    args = ap.parse_args()

    cfg = harness.RunConfig(dataset="toy2d", subset=args.inputs, outdir=args.out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, test = harness.load_datasets(cfg)
    export_csv(test, out / "toy2d_test.csv")
    certs = harness.run_certification(cfg, load_model(args.model), test)
    harness.write_outputs(certs, cfg)
    for c in certs:
        path = out / f"region_{c.method.lower()}_{c.input_id:05d}.csv"
        harness.write_region_csv(harness.export_region_2d(c, args.points), path)
        print(f"{c.method:6s} input {c.input_id}: proxy radius {c.proxy_radius:.3f} -> {path.name}")


if __name__ == "__main__":
    main()
