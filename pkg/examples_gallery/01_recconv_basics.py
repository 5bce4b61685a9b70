"""Build a RecConv operator, run it, and compare against a plain depthwise conv.

Run with ``python examples_gallery/01_recconv_basics.py``.
"""
import numpy as np

from recconv import RecConv, RecConvConfig, conv2d, count_params
from recconv.rng import SplitMix64

x = SplitMix64(0).uniform(8 * 64 * 64).reshape(1, 8, 64, 64)

for level in range(4):
    cfg = RecConvConfig(channels=8, kernel=5, level=level)
    op = RecConv(cfg, seed=1)
    y, trace = op.forward(x)
    print(f"level {level}: output {y.shape}, pyramid {trace.shapes}, "
          f"{count_params(op)['conv_weights']} weights, nominal ERF {cfg.nominal_erf}")

# with no decomposition the operator is exactly one depthwise conv
op0 = RecConv(RecConvConfig(8, 5, 0), seed=1)
print("level 0 equals a single conv:", np.array_equal(op0(x), conv2d(x, op0.weights.levels[0])))

# the recurrent variant keeps a fixed weight budget regardless of depth
for level in (1, 2, 4):
    rec = RecConv(RecConvConfig(8, 5, level, aggregation="recurrent"), seed=1)
    print(f"recurrent level {level}: {count_params(rec)['conv_weights']} weights")
