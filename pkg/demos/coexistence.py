"""Parameters with triples, {2,3} doubles and type-3 singles side by side.

    python demos/coexistence.py 1 1 1     (about a minute at cap 8)
"""
import sys
import time

from tetrablock import partition

N = [int(v) for v in sys.argv[1:4]] if len(sys.argv) > 3 else [1, 1, 1]
cap = int(sys.argv[4]) if len(sys.argv) > 4 else 8
M, G, cert = partition.coexistence_params(*N)
print("M =", M.round(6), " Gamma diagonal =", [G[i, i] for i in range(3)])
for step in cert["cascade"]:
    print(f"  {step['inequality']:<50} {step['lhs']:12.4g} > {step['rhs']:<12.4g} {step['holds']}")
t0 = time.perf_counter()
res = partition.minimize_e0bar(M, G, count_cap=cap)
nt, nd, ns = partition.coexistence_counts(res.configuration)
print(f"optimum {res.signature.label}  ({time.perf_counter() - t0:.0f}s, saturated {res.cap_saturated})")
print(f"triples {nt} >= {N[0]}, doubles(2,3) {nd} >= {N[1]}, singles(3) {ns} >= {N[2]}")
