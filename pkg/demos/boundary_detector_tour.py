"""A guided tour of the differentiable boundary detector on toy latents.

The detector turns a sequence of frame vectors into segments in four moves:

  1. adjacent-frame cosine dissimilarity, min/max normalized per utterance;
  2. two-scale peak scores that keep only isolated local maxima above a
     threshold;
  3. a straight-through indicator whose forward value is the saturated
     tanh(1000 p) but whose gradient follows the gentle tanh(10 p);
  4. a column-normalized weight matrix that averages each segment's frames.

Here the frames are built by hand, three plateaus with small noise, so every
intermediate quantity can be checked against what we planted.
"""

import numpy as np

from scpc import boundary
from scpc import diffcore as dc

rng = np.random.default_rng(0)

# Three plateaus of 8, 6, and 10 frames pointing in three fixed directions.
directions = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.6, 0.0, 0.8]])
frames0 = np.repeat(directions, [8, 6, 10], axis=0) + 0.02 * rng.standard_normal((24, 3))
true_changes = [7, 13]  # junction t sits between frames t and t+1

tape = dc.Tape()
frames = tape.tensor(frames0, requires_grad=True)

sim, dissim = boundary.dissimilarity(tape, frames)
print("dissimilarity per junction (1 = sharpest change in this utterance):")
print(np.array2string(dissim.data, precision=2, suppress_small=True))
print(f"planted changes at junctions {true_changes}, "
      f"argmax pair {np.argsort(dissim.data)[-2:].tolist()}\n")

narrow, wide, final = boundary.peak_scores(tape, dissim, thres=0.09)
print("final peak scores (nonzero only at isolated maxima clearing the threshold):")
print(np.array2string(final.data, precision=2, suppress_small=True), "\n")

soft, hard, indicator = boundary.boundary_indicators(tape, final)
print("straight-through indicator, forward values:", np.round(indicator.data, 3))
print("equal to hard tanh(1000 p):", bool(np.array_equal(indicator.data, hard.data)), "\n")

weights, spans = boundary.segment_weights(tape, indicator, frames.shape[0])
print(f"{len(spans)} segments, half-open frame spans: {spans}")
print("weight columns sum to one:", np.allclose(weights.data.sum(axis=0), 1.0))

means = boundary.segment_means(tape, frames, weights)
for j, (s, e) in enumerate(spans):
    drift = np.linalg.norm(means.data[j] - frames0[s:e].mean(axis=0))
    print(f"  segment {j}: frames [{s}, {e}), mean within {drift:.1e} of the loop answer")

# The same junctions expressed as times: junction t separates the 10 ms
# frames t and t+1, so it maps to (t + 1) * 10 ms.
peak_junctions = np.flatnonzero(indicator.data > 0.5)
print("\npredicted boundary times:", [(int(t) + 1) * 0.010 for t in peak_junctions], "s")

# Gradients reach the frames through the soft path even though the forward
# pass used saturated indicators.
loss = dc.sum_axis(dc.mul(means, tape.constant(rng.standard_normal(means.shape))), axis=None)
tape.backward(loss)
print("gradient flows to every frame:", bool(np.all(np.any(frames.grad != 0, axis=1))))
