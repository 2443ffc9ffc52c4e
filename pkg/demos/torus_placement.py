"""Placement of an optimal configuration on the torus and the finite-eta
energy of that placement."""
import math

import numpy as np

from tetrablock import partition, torus

M = (8.0, 11.0, 9.5)
G = np.diag([1.0, 1.25, 2.7])
cfg = partition.minimize_e0bar(M, G).configuration
print("configuration:", partition.Signature.of_configuration(cfg).label)
place = torus.optimize_placement(cfg, G)
pair = torus.min_pairwise_distance(place)
print("positions:\n", place.positions.round(6))
print(f"min distance {pair.distance:.6f} (grid {place.n_grid}, bound {1 / (2 * place.n_grid):.4f})")
for eta in (1e-2, 1e-3, 1e-4):
    d = torus.assemble_E_eta(cfg, place, eta, G)
    print(f"eta {eta:.0e}: E = {d['total']:.10f}  sum e0 = {d['e0_sum']:.10f}  "
          f"scaled remainder {abs(d['remainder']) * abs(math.log(eta)):.6f}")
