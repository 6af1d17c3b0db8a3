"""Sweep the feature-tap depth and the history batch size.

The adapter corrects the representation at one chosen block; tapping too
early leaves the correction to fight every later nonlinearity, tapping the
last block reduces the resume path to an affine map. The history batch
controls how many delayed windows each gradient summary averages over.
Neither knob has a universal winner, which is the point of the sweep.
"""

from __future__ import annotations

import argparse
import sys

from driftcast import (DriftSpec, EngineConfig, SplitSpec, build_adapter,
                       build_model, chrono_split, gen_concept_drift,
                       offline_train, pretrain_adapter, run_adaptz, run_ori)

L, K, WIDTH, BLOCKS = 48, 12, 16, 3


def deploy(tap: int, batch: int, seed: int, splits) -> float:
    train, val, test = splits
    model = build_model(L, K, d=WIDTH, n_blocks=BLOCKS, tap_index=tap,
                        seed=seed)
    trained = offline_train(model, train, epochs=4, lr=1e-3, batch=32,
                            seed=seed + 1)
    cfg = EngineConfig(method="adaptz", horizon=K, lookback=L,
                       hist_batch=batch, seed=seed)
    adapter = build_adapter(trained.d, seed=seed + 2)
    adapter = pretrain_adapter(trained, adapter, val, epochs=2, lr=1e-3,
                               hist_batch=batch)
    return run_adaptz(trained, adapter, test, cfg).mse


def main() -> int:
    p = argparse.ArgumentParser(description="Tap depth / history batch sweep")
    p.add_argument("--seed", type=int, default=2025)
    p.add_argument("--length", type=int, default=1500)
    args = p.parse_args()

    spec = DriftSpec(kind="concept_drift", length=args.length, channels=2,
                     change_points=[int(0.8 * args.length)], magnitudes=[1.0],
                     seed=args.seed)
    splits = chrono_split(gen_concept_drift(spec), SplitSpec(), L=L, k=K)

    # frozen reference, tap irrelevant
    model = build_model(L, K, d=WIDTH, n_blocks=BLOCKS, seed=args.seed)
    trained = offline_train(model, splits[0], epochs=4, lr=1e-3, batch=32,
                            seed=args.seed + 1)
    base_cfg = EngineConfig(method="ori", horizon=K, lookback=L,
                            hist_batch=K, seed=args.seed)
    base = run_ori(trained, splits[2], base_cfg).mse
    print(f"frozen baseline mse {base:.4f}\n")

    print(f"{'tap':>4}{'batch':>7}{'mse':>10}{'vs frozen':>11}")
    for tap in range(BLOCKS):
        for batch in (6, 12, 24):
            mse = deploy(tap, batch, args.seed, splits)
            print(f"{tap:>4}{batch:>7}{mse:>10.4f}{100 * (base - mse) / base:>10.1f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())
