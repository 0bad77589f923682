"""Melnikov constant by the solvability integral and by finite differences."""

import sys

from latticefronts.lattice import Direction
from latticefronts.spectral import melnikov_constant
from latticefronts.wave import solve_wave

rho = float(sys.argv[1]) if len(sys.argv) > 1 else 0.9
gamma = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-5

print(f"rho = {rho}, gamma = {gamma}")
print(f"{'dir':>8s} {'c':>12s} {'M integral':>14s} {'M fd':>14s} {'rel diff':>9s} {'lambda1':>11s}")
for d in [(1, 0), (1, 1), (2, 1), (3, 1), (3, 2)]:
    p = solve_wave(rho, Direction(*d), gamma)
    r = melnikov_constant(p, check=False)
    print(f"{str(d):>8s} {p.c:12.6f} {r.integral:14.8f} {r.fd:14.8f} {r.discrepancy:9.1e} {r.lambda1:11.3e}")
