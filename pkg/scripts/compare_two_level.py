"""
Two-Level Stratified Comparison Script
======================================

Trains the full conditioned model and the latent-free baseline on the
``two-level`` preset at 32x32 with matched trunk size and iteration budget,
then compares innermost-level and total test PSNR over three seeds.

The full model should beat the baseline on the innermost level by at least
1 dB while losing no more than 0.25 dB in total, for at least two seeds.

Run with: uv run python scripts/compare_two_level.py [--iterations N]
"""

import argparse
import logging
from pathlib import Path

import pandas as pd

from strata_nerf.config import parse_config
from strata_nerf.metrics import evaluate
from strata_nerf.scenegen import make_preset, write_dataset
from strata_nerf.training import train

ROOT = Path(__file__).parent.parent
SEEDS = (0, 1, 2)
INNER_MARGIN_DB = 1.0
TOTAL_SLACK_DB = 0.25

parser = argparse.ArgumentParser()
parser.add_argument("--config", type=Path, default=ROOT / "configs" / "two-level-toy.json")
parser.add_argument("--out", type=Path, default=ROOT / "runs" / "compare_two_level")
parser.add_argument("--iterations", type=int)
args = parser.parse_args()

logging.basicConfig(level=logging.WARNING)

# ============================================================
# 1. DATASET
# ============================================================

print("=" * 70)
print("TWO-LEVEL STRATIFIED COMPARISON")
print("=" * 70)

base = parse_config(args.config, {"iterations": args.iterations})
scene = make_preset("two-level", base.scene.resolution, base.scene.counts)
manifest = write_dataset(scene, args.out / "dataset", seed=7)
inner = manifest.num_levels - 1

print(f"\n📊 Dataset: {len(manifest.frames)} frames, {manifest.num_levels} levels, "
      f"{scene.width}x{scene.height}")
print(f"   Iterations per run: {base.train.iterations:,}")

# ============================================================
# 2. TRAIN + EVALUATE
# ============================================================

print("\n" + "=" * 70)
print("TRAINING FULL AND BASELINE VARIANTS")
print("=" * 70)

rows = []
for seed in SEEDS:
    for variant in ("full", "baseline"):
        config = base.with_overrides({"variant": variant, "seed": seed})
        run_dir = args.out / f"{variant}_seed{seed}"
        config.write(run_dir)
        result = train(manifest, config.train, run_dir)
        report = evaluate(result.checkpoint, manifest, "test", options=config.train.render_options)
        report.write(run_dir / "eval")
        per_level = report.per_level.set_index("level")
        rows.append({
            "seed": seed,
            "variant": variant,
            "inner_psnr": per_level.loc[f"Level {inner}", "psnr"],
            "total_psnr": per_level.loc["Total", "psnr"],
        })
        print(f"   • seed {seed} {variant:<8} inner {rows[-1]['inner_psnr']:.2f} dB  "
              f"total {rows[-1]['total_psnr']:.2f} dB")

# ============================================================
# 3. VERDICT
# ============================================================

print("\n" + "=" * 70)
print("RESULTS")
print("=" * 70)

table = pd.DataFrame(rows)
wide = table.pivot(index="seed", columns="variant", values=["inner_psnr", "total_psnr"])
verdict = pd.DataFrame({
    "inner_gain": wide[("inner_psnr", "full")] - wide[("inner_psnr", "baseline")],
    "total_gain": wide[("total_psnr", "full")] - wide[("total_psnr", "baseline")],
})
verdict["holds"] = (verdict["inner_gain"] >= INNER_MARGIN_DB) & (verdict["total_gain"] >= -TOTAL_SLACK_DB)

print("\n" + verdict.to_markdown(floatfmt=".3f"))
table.to_csv(args.out / "comparison.csv", index=False)

passed = int(verdict["holds"].sum())
print(f"\n{'✅' if passed >= 2 else '❌'} Criterion holds for {passed}/{len(SEEDS)} seeds")
print(f"💾 Saved: {args.out / 'comparison.csv'}")
