"""Empirical P[0 ∈ I^u] against 1 - exp(-u / g(0,0)).

    python demos/occupation_density.py --N 16 --replicas 500
"""
import argparse
import math

from macroholes import interlacements as ri
from macroholes.lattice import box
from macroholes.potential import green_mc, green_solve
from macroholes.rng import derive_seed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--replicas", type=int, default=500)
    ap.add_argument("--levels", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0])
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    solve, mc = green_solve(None, 24), green_mc(None, 16, walks=20000, seed=a.seed)
    print(f"g(0,0): linear solve {solve.value:.5f} ± {solve.stderr:.5f}, walks {mc.value:.4f} ± {mc.stderr:.4f}")
    print(f"{'u':>6} {'empirical':>10} {'closed form':>12} {'z':>6}")
    for j, u in enumerate(a.levels):
        spec = ri.RiSpec(u, box((0, 0, 0), a.N), keep_paths=False)
        hits = sum((0, 0, 0) in ri.sample(spec, derive_seed(a.seed + j, i)).trace for i in range(a.replicas))
        p = ri.occupation_density(u, solve.value)
        z = (hits / a.replicas - p) / math.sqrt(p * (1 - p) / a.replicas)
        print(f"{u:6.2f} {hits / a.replicas:10.4f} {p:12.4f} {z:+6.2f}")


if __name__ == "__main__":
    main()
