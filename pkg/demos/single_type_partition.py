"""One constituent: the optimizer against the closed-form count scan.

With M = (M1, 0, 0) and Gamma = I every bubble is a circle and the best
split into n equal circles has energy f(n) = 2 sqrt(pi M1 n) + M1^2/(4 pi n).
"""
import math

import numpy as np

from tetrablock import partition

for M1 in (5.0, 20.0, 40.0, 80.0):
    f = {n: 2 * math.sqrt(math.pi * M1 * n) + M1 ** 2 / (4 * math.pi * n) for n in range(1, 20)}
    n_best = min(f, key=f.get)
    res = partition.minimize_e0bar((M1, 0, 0), np.eye(3))
    print(f"M1 = {M1:5.1f}: optimizer {res.signature.label:>4} E = {res.energy:.10f}   "
          f"scan n = {n_best} E = {f[n_best]:.10f}")
