"""The evaluation toolbox on worked examples.

Regression error statistics with a bootstrap confidence interval, paired
model comparison with the Wilcoxon signed-rank test, thresholded binary
classification with MCC/AUC, least-squares agreement and outlier listing.
"""

import numpy as np

from fundusq.datasets import BinaryLabel
from fundusq.metrics import (
    binary_report,
    linear_fit_r2,
    outliers,
    regression_report,
    relative_improvement,
    wilcoxon_signed_rank,
)

rng = np.random.default_rng(0)

# Simulated test set: 209 reference scores and two models' predictions,
# model B a little better than model A.
reference = rng.uniform(2.0, 9.5, 209).round(1)
model_a = reference + rng.normal(0, 0.85, 209)
model_b = reference + rng.normal(0, 0.75, 209)

rep_a = regression_report(model_a, reference, seed=0)
rep_b = regression_report(model_b, reference, seed=0)
print("regression statistics (n=209):")
for name, rep in (("model A", rep_a), ("model B", rep_b)):
    low, high = rep.ci95
    print(f"  {name}: MAE {rep.mae:.3f} [{low:.3f}, {high:.3f}], "
          f"RMSE {rep.rmse:.3f}, max error {rep.max_error:.2f}")

improvement = relative_improvement(rep_a.mae, rep_b.mae)
print(f"  relative MAE improvement: {improvement * 100:.1f}%")

stat, p = wilcoxon_signed_rank(rep_a.per_sample_abs_errors, rep_b.per_sample_abs_errors)
print(f"  Wilcoxon signed-rank: statistic {stat:.1f}, two-sided p {p:.2e}")

slope, intercept, r2 = linear_fit_r2(model_b, reference)
print(f"\nlinear fit of reference on predicted: "
      f"slope {slope:.3f}, intercept {intercept:.3f}, R^2 {r2:.3f}")

worst = outliers(model_b, reference, [f"img{i:03d}" for i in range(209)], cutoff=1.5)
print(f"outliers with |error| > 1.5: {len(worst)}")
for rid, pred, ref, delta in worst[:3]:
    print(f"  {rid}: predicted {pred:.2f}, reference {ref:.2f}, delta {delta:+.2f}")

# Binary external validation: continuous scores thresholded at 6.5.
labels = [BinaryLabel.GOOD if r >= 6.5 else BinaryLabel.POOR for r in reference]
binary = binary_report(model_b, labels, threshold=6.5)
print(f"\nbinary validation at threshold 6.5 (Good = positive):")
print(f"  accuracy {binary.accuracy:.3f}, sensitivity {binary.sensitivity:.3f}, "
      f"specificity {binary.specificity:.3f}")
print(f"  MCC {binary.mcc:.3f}, AUC {binary.auc:.3f}")
print(f"  confusion: tp={binary.tp} fp={binary.fp} tn={binary.tn} fn={binary.fn}")
