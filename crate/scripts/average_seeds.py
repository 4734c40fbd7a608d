#!/usr/bin/env python3
"""Train and evaluate once per seed, then average the metric reports.

Example:
    python3 scripts/average_seeds.py --data runs/haw5 --out runs/haw5/avg \
        --model-config mode=local --train-config lr=0.005 max_epochs=30
"""

import argparse
import json
import statistics
import subprocess
import sys
from pathlib import Path


def run(cmd):
    print("+", " ".join(cmd), file=sys.stderr)
    subprocess.run(cmd, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bin", default="target/release/inf2vec", help="path to the inf2vec binary")
    ap.add_argument("--data", required=True, help="directory with train/valid/test.jsonl and meta.json")
    ap.add_argument("--out", required=True, help="directory for per-seed checkpoints and reports")
    ap.add_argument("--seeds", type=int, default=10, help="runs seeds 0..N-1")
    ap.add_argument("--model-config", nargs="*", default=[])
    ap.add_argument("--train-config", nargs="*", default=[])
    args = ap.parse_args()

    out = Path(args.out)
    reports = []
    for seed in range(args.seeds):
        run_dir = out / f"seed{seed}"
        ckpt = run_dir / "model.ckpt"
        cmd = [args.bin, "train", "--data", args.data, "--seed", str(seed), "--out", str(ckpt)]
        if args.model_config:
            cmd += ["--model-config", *args.model_config]
        if args.train_config:
            cmd += ["--train-config", *args.train_config]
        run(cmd)
        report = run_dir / "report.json"
        run([args.bin, "evaluate", "--data", str(Path(args.data) / "test.jsonl"),
             "--ckpt", str(ckpt), "--out", str(report)])
        reports.append(json.loads(report.read_text()))

    summary = {"seeds": args.seeds}
    for key in ("f1", "mae", "nll"):
        values = [r[key] for r in reports if r.get(key) is not None]
        if values:
            summary[key] = {
                "mean": statistics.fmean(values),
                "std": statistics.stdev(values) if len(values) > 1 else 0.0,
            }
        else:
            summary[key] = None
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
