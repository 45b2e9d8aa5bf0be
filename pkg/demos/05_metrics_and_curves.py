"""Evaluation metrics walk-through on a controlled example.

Builds a raw disparity map with a known 20% error rate and an oracle-ish
confidence signal, then shows bad-N / RMS / density, the sparsification
curve and AUC, and the error-vs-invalid trade-off curve as CSV + SVG.
"""

from pathlib import Path

import numpy as np

from semistereo.evalnet import ConfidenceMap
from semistereo.imageio import DisparityMap
from semistereo.metrics import (
    bad_n,
    curve_csv,
    curve_svg,
    density_and_invalid,
    error_vs_invalid_curve,
    rms,
    sparsification_auc,
)

out = Path("demo_out/metrics")
out.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(3)
gt = DisparityMap(rng.integers(0, 16, (64, 64)).astype(np.float32), ndisp=16)
raw_vals = gt.data.copy()
wrong = rng.random((64, 64)) < 0.2
raw_vals[wrong] = np.minimum(raw_vals[wrong] + 4, 15)
raw = DisparityMap(raw_vals, ndisp=16)

print(f"bad-1: {bad_n(raw, gt, None, 1.0)[0] * 100:.1f}%")
print(f"rms:   {rms(raw, gt):.3f} px")
print(f"density/invalid: {density_and_invalid(raw)}")

# a noisy confidence that still ranks most errors low
conf_vals = np.where(wrong, rng.uniform(0, 0.55, wrong.shape), rng.uniform(0.45, 1.0, wrong.shape))
conf = ConfidenceMap(conf_vals.astype(np.float32), np.ones_like(wrong))

curve = sparsification_auc(conf, wrong)
print(f"sparsification AUC: {curve.auc:.4f} (error rate {wrong.mean():.3f})")

points = error_vs_invalid_curve(raw, conf, gt, n=1.0)
(out / "curve.csv").write_text(curve_csv(points))
(out / "curve.svg").write_text(curve_svg(points, y_label="bad-1 over retained"))
print(f"wrote {out}/curve.csv and curve.svg "
      f"({len(points)} thresholds, invalid {points[0, 1]:.2f} -> {points[-1, 1]:.2f})")
