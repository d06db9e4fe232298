"""Capacity excess η, Fraenkel asymmetry λ and η/λ^4 over the built-in shapes.

    python demos/isoperimetry_table.py --resolution 16
"""
import argparse
import math
import warnings

from macroholes import shapes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nu", type=float, default=4 * math.pi / 3 / 8)
    ap.add_argument("--resolution", type=int, default=16)
    ap.add_argument("--M", type=int, default=16)
    a = ap.parse_args()
    warnings.simplefilter("ignore", shapes.CoarseResolutionWarning)

    print(f"{'shape':<18} {'eta':>9} {'err':>8} {'lambda':>7} {'eta/lam^4':>10}")
    for name, E in shapes.shape_family(a.nu, a.resolution).items():
        r = shapes.fmp_check(E, a.M)
        ratio = "-" if r["ratio"] is None else f"{r['ratio']:.2f}"
        print(f"{name:<18} {r['eta']:9.4f} {r['eta_stderr']:8.4f} {r['lambda']:7.3f} {ratio:>10}")


if __name__ == "__main__":
    main()
