"""Perimeter and outer radii of triple bubbles along m3 -> 0, as CSV.

    python demos/geometry_sweep.py > sweep.csv
"""
import csv
import sys

import numpy as np

from tetrablock import geometry

m1, m2 = 1.0, 2.0
pd = geometry.solve_double(m1, m2).perimeter
w = csv.writer(sys.stdout, lineterminator="\n")
w.writerow(["m3", "perimeter", "gap_to_double", "r1", "r2", "r3"])
for m3 in np.logspace(0, -8, 17):
    g = geometry.solve_triple((m1, m2, m3))
    r = 1.0 / g.curvatures[:3]
    w.writerow([f"{m3:.3e}", f"{g.perimeter:.12f}", f"{g.perimeter - pd:.3e}"] + [f"{v:.6f}" for v in r])
