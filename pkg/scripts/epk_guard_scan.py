"""How many boundary pairs survive the pointwise-kernel angle guard.

The asymptotic guard n^(-1/16) log^2 n exceeds pi for every n <= 64, so it
admits no pair at all; the harness uses a fixed pi/2 guard instead.
"""
import math

import numpy as np

from excursions.harness import epk_angle_guard, epk_residuals

for n in (16, 32, 64):
    g = epk_angle_guard(n)
    r = epk_residuals(n)
    res = r["residuals"]
    print(f"n={n:3d}  asymptotic guard {g:.3f} (pi = {math.pi:.3f})  "
          f"pi/2 guard keeps {r['pairs']} pairs, median residual {np.median(res):.2e}")
