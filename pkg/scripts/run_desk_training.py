#!/usr/bin/env python3
"""Train every shipped xor-blobs config and print a comparison table.

    python scripts/run_desk_training.py [--seeds 7 1 2] [--out runs/]

Each run writes records.csv and summary.json under ``<out>/<config>/seed<k>/``.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from mirrorquant.harness import load_config, train, write_outputs

CONFIGS = ("xor_float_ref", "xor_md_tanh_s", "xor_md_softmax_s", "xor_bc_ste", "xor_ternary_shifted_tanh")
ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[7])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--configs", nargs="+", default=list(CONFIGS))
    args = ap.parse_args()

    print(f"{'config':28s} {'seed':>4s} {'float acc':>9s} {'quant acc':>9s} {'best iter':>9s}")
    for name in args.configs:
        base = load_config(ROOT / "configs" / f"{name}.json")
        for seed in args.seeds:
            cfg = replace(base, seed=seed, data=replace(base.data, seed=None))
            res = train(cfg)
            write_outputs(res, Path(args.out) / name / f"seed{seed}")
            print(f"{name:28s} {seed:4d} {res.final_float_test_acc:9.4f} {res.final_test_acc:9.4f} {res.best_iter:9d}")


if __name__ == "__main__":
    main()
