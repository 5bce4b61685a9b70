"""Measured MACs against the closed-form growth factor.

Counting walks the actual dataflow, so the ratio below is a measurement, not
a formula.  On odd sides the pyramid uses ceil halving and the ratio drifts
above the divisible-case value.
"""
from fractions import Fraction

from recconv import RecConv, RecConvConfig, count_macs, mac_factor_closed_form

for side in (64, 37):
    print(f"input {side}x{side}")
    for level in range(6):
        cfg = RecConvConfig(16, 3, level)
        measured = count_macs(RecConv(cfg), (side, side))["conv"]
        ratio = Fraction(measured, 9 * 16 * side * side)
        print(f"  level {level}: measured {str(ratio):>12} ({float(ratio):.4f})"
              f"   closed form {mac_factor_closed_form(level)}")
