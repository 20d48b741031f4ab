#!/usr/bin/env python3
"""The multi-run stability protocol: repeat a training run with consecutive
seeds, collect the per-run AUCs, and summarize them with a Student-t 95%
confidence interval.  The interval width is the stability proxy: narrower
means the training procedure is more repeatable.

Run:  python demos/04_robustness_ci.py
"""
import numpy as np

from wassda.data import ShiftSpec, generate_shifted_domains, make_splits
from wassda.metrics import robustness_summary
from wassda.train import TrainConfig, run_mode

print("=== the machinery on a hand-checkable vector ===")
s = robustness_summary([0.78, 0.79, 0.80, 0.81, 0.82])
print(f"values {list(s.values)}")
print(f"mean={s.mean:.4f}  95% CI=[{s.lower:.4f}, {s.upper:.4f}]  "
      f"half-width={(s.upper - s.mean):.4f}  (expect half-width ~0.0196)\n")

print("=== five seeded runs at demo scale ===")
spec = ShiftSpec(shift=2.0, seed=2)
src, tgt = generate_shifted_domains(spec, n_source=2500, n_target=2200)

aucs = []
for run in range(5):
    ds = make_splits(src, tgt, source_sample=2000, target_sample=2000, seed=run)
    cfg = TrainConfig(mode="wd_wada", epochs=6, batch_size=64, n_critic=3, seed=run)
    result = run_mode(ds, cfg, eval_during_training=False)
    aucs.append(result.report.auc)
    print(f"run {run}: target-test auc = {aucs[-1]:.4f}")

s = robustness_summary(aucs)
print(f"\nmean={s.mean:.4f}  95% CI=[{s.lower:.4f}, {s.upper:.4f}]  "
      f"width={s.width:.4f}")
print("(rerunning this script reproduces these numbers exactly: every run "
      "is seeded)")
