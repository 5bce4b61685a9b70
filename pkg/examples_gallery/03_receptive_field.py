"""Receptive field of RecConv: nominal k * 2**level, exact structural support,
and the gradient map of a randomly initialised operator.
"""
import numpy as np

from recconv import RecConv, RecConvConfig, erf_map, structural_box, structural_rf

for level in range(5):
    cfg = RecConvConfig(4, 3, level)
    print(f"k=3 level {level}: nominal {cfg.nominal_erf:3d}, structural {structural_rf(cfg):3d}, "
          f"box offsets {structural_box(cfg)}")

cfg = RecConvConfig(4, 3, 3)
m = erf_map(RecConv(cfg, seed=0), np.zeros((1, 4, 128, 128)))
print("random-weight gradient support", m.support_size(), "offsets", m.relative_box())
print("side of the square holding 95% of the gradient mass:", m.energy_side(0.95))
