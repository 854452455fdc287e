"""How the boundary metrics behave, including the failure mode R-value exists for.

Precision and recall come from one-to-one greedy matching within a 20 ms
window.  F1 alone is easy to inflate: predict a boundary every 40 ms and
recall soars while precision collapses, but the harmonic mean still looks
respectable on dense reference sets.  The R-value penalizes that
over-segmentation directly, which is why it accompanies F1 everywhere here.
"""

import numpy as np

from scpc import metrics

refs = {"u0": np.array([0.30, 0.55, 0.90, 1.20]), "u1": np.array([0.25, 0.80, 1.10])}
durations = {"u0": 1.5, "u1": 1.3}

# A decent predictor: close to the references, one miss, one spurious extra.
preds = {"u0": np.array([0.31, 0.54, 0.91, 1.21]), "u1": np.array([0.26, 0.60, 1.11])}
report = metrics.evaluate(preds, refs, tolerance=0.020, durations=durations)
print(metrics.format_report(report, "close predictor"))

# The every-40 ms predictor: recall looks fine, R-value tells the truth.
periodic = {u: metrics.periodic_boundaries(durations[u], 0.040) for u in refs}
report = metrics.evaluate(periodic, refs, tolerance=0.020, durations=durations)
print(metrics.format_report(report, "every 40 ms"))

# Count-matched random boundaries: the bar any learned model must clear.
rng = np.random.default_rng(0)
random = {u: metrics.random_boundaries(durations[u], len(refs[u]), rng) for u in refs}
report = metrics.evaluate(random, refs, tolerance=0.020, durations=durations)
print(metrics.format_report(report, "count-matched random"))

# Matching is one-to-one: two predictions near one reference yield one hit.
counts = metrics.match([0.299, 0.301], [0.30], tolerance=0.020)
print(f"two predictions, one reference: hits={counts.n_hit}, "
      f"precision={counts.n_hit / counts.n_pred:.2f}")
