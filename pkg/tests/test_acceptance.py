"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (about 12 minutes on
one core).
"""
import math
import time

import numpy as np
import pytest

from macroholes import coarse, experiments, gff, interlacements as ri, shapes, tilt
from macroholes.config import ExperimentConfig
from macroholes.lattice import SiteSet, ball_euclidean, box, seeded_component
from macroholes.potential import capacity, green_mc, green_solve, killed_green
from macroholes.rng import derive_seed

from oracles import bfs_component, brute_symdiff

pytestmark = [pytest.mark.slow,
              pytest.mark.filterwarnings("ignore::macroholes.shapes.CoarseResolutionWarning")]

NU_FAMILY = 4 * math.pi / 3 / 8


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok
    return emit


# 1 -----------------------------------------------------------------------------------------

def test_c1_occupation_density(report):
    t0 = time.perf_counter()
    a = green_solve(None, 24)
    b = green_mc(None, 16, walks=20000, seed=1)
    dual = abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr)
    g = a.value
    n = 1000
    lines, ok = [], dual
    for j, u in enumerate((0.5, 1.0)):
        spec = ri.RiSpec(u, box((0, 0, 0), 16), keep_paths=False)
        hits = sum((0, 0, 0) in ri.sample(spec, derive_seed(100 + j, i)).trace for i in range(n))
        p = ri.occupation_density(u, g)
        se = math.sqrt(p * (1 - p) / n)
        z = (hits / n - p) / se
        ok = ok and abs(z) < 3
        lines.append(f"u={u}: {hits / n:.4f} vs {p:.4f} (z={z:+.2f})")
    secs = time.perf_counter() - t0
    ok = ok and secs < 300
    assert report(1, ok, f"g00 solve {a.value:.5f}±{a.stderr:.5f}, MC {b.value:.4f}±{b.stderr:.4f}; "
                         + "; ".join(lines) + f"; {n} replicas each; {secs:.0f}s")


# 2 -----------------------------------------------------------------------------------------

def test_c2_capacity_scaling(report):
    target = 2 * math.pi / 3
    Ns = (8, 16, 32, 64)
    vals = [capacity(ball_euclidean(N)).value / N for N in Ns]
    gaps = [abs(v - target) / target for v in vals]
    lim, err, flagged = shapes._extrapolate(vals[-3:])
    gap = abs(lim - target) / target
    ok = gap < 0.05 and all(x > y for x, y in zip(gaps, gaps[1:]))
    assert report(2, ok, "cap/N " + ", ".join(f"N={N}: {v:.4f}" for N, v in zip(Ns, vals))
                  + f"; extrapolated {lim:.4f}±{err:.4f} vs {target:.4f}, gap {gap:.2%}")


# 3 -----------------------------------------------------------------------------------------

def test_c3_gff_entropy_rate(report):
    h = tilt.condenser_profile(0.5, 2.0)
    target = tilt.gff_target(1.0, 0.5, 2.0)
    reps = [tilt.gff_entropy(h.on_lattice(N), N, target) for N in (12, 24, 48)]
    vals = [r.normalized for r in reps]
    gaps = [r.gap for r in reps]
    ok = gaps[-1] < 0.05 and all(x > y for x, y in zip(gaps, gaps[1:])) and (
        all(x < y for x, y in zip(vals, vals[1:])) or all(x > y for x, y in zip(vals, vals[1:])))
    assert report(3, ok, ", ".join(f"N={N}: {v:.4f}" for N, v in zip((12, 24, 48), vals))
                  + f" vs {target:.5f}; gap at 48 {gaps[-1]:.2%}")


# 4 -----------------------------------------------------------------------------------------

@pytest.mark.parametrize("model,replicas", [("RI", 10), ("SRW", 20), ("GFF", 40)])
def test_c4_tilted_typicality(report, model, replicas):
    r = experiments.tilt_verify(model, 24, replicas=replicas, seed=7)
    ok = r["tilted_frequency"] >= 0.9 and r["plain_frequency"] <= 0.1 and math.isfinite(r["log_lower_bound"])
    assert report(f"4[{model}]", ok, f"tilted {r['tilted_frequency']:.2f}, plain {r['plain_frequency']:.2f} "
                  f"over {replicas}; entropy ({r['entropy_kind']}) {r['entropy']:.2f}; "
                  f"log P >= {r['log_lower_bound']:.2f}")


# 5 -----------------------------------------------------------------------------------------

def test_c5_isoperimetry(report):
    fam = shapes.shape_family(NU_FAMILY, 32)
    bad, lines = [], []
    for name, E in fam.items():
        r = shapes.fmp_check(E, 16)
        eta, se = r["eta"], r["eta_stderr"]
        lines.append(f"{name} eta={eta:.4f}±{se:.4f} lam={r['lambda']:.3f}")
        if eta < -3 * se or (name != "ball" and not eta > 3 * se):
            bad.append(name)
    checked = 0
    for nu in (0.45, 0.5):
        for mu in (0.02, 0.1):
            for name, E in fam.items():
                c = shapes.coercivity_check(E, nu, mu, 16)
                if c["hypothesis"]:
                    checked += 1
                    if c["status"] != "positive":
                        bad.append(f"{name}@nu={nu},mu={mu}")
    assert report(5, not bad, "; ".join(lines) + f"; coercivity cases checked {checked}; failures {bad}")


# 6, 7 --------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ri_audit():
    cfg = ExperimentConfig(model="RI", N=24, level=6.0, nu=0.25, replicas=100, seed=2024)
    scales = coarse.make_scales(24, L0=1, Lhat0=3, spacing=1, Ltilde0=10)
    reps = []
    for i in range(cfg.replicas):
        medium = experiments.sample_medium(cfg, derive_seed(cfg.seed, i))
        reps.append(coarse.run_pipeline(medium, 24, scales, cfg.nu))
    return reps


def test_c6_coarse_grain_determinism(report, ri_audit):
    lip = sum(r.lipschitz_violations for r in ri_audit)
    outer = sum(r.outer_violations for r in ri_audit)
    events = [r for r in ri_audit if r.hole_event]
    zero = sum(r.zero_violations for r in events)
    insul = sum(not r.insulated for r in events)
    far = sum(r.interface_outside_3N for r in ri_audit)
    ok = lip == outer == zero == insul == far == 0 and len(events) > 0
    assert report(6, ok, f"{len(ri_audit)} configurations, {len(events)} hole events; violations: "
                  f"Lipschitz {lip}, outer {outer}, zero-density {zero}, insulation {insul}, "
                  f"interface beyond 3N {far}")


def test_c7_segmentation_chain(report, ri_audit):
    events = [r for r in ri_audit if r.hole_event]
    interior = sum(not r.F_in_interior for r in events)
    vols = sum(not (r.nu <= r.volume_F <= r.volume_A) for r in events)
    chain = sum(not (r.chain_35 and r.chain_37) for r in events)
    ok = interior == vols == chain == 0 and len(events) > 0
    slack = max((r.discretization for r in events), default=float("nan"))
    assert report(7, ok, f"{len(events)} hole events; violations: interior {interior}, volume order {vols}, "
                  f"chain {chain}; max voxel slack {slack:.4f}")


# 8 -----------------------------------------------------------------------------------------

def test_c8_solidification(report):
    n = 64
    periods = [0.25, 0.125, 0.0625]
    A = coarse.ball_shape(0.4, n)
    U0 = coarse.ball_shape(0.45, n)
    sig = [coarse.perforated_shell(0.45, 0.0625, p, n) for p in periods]
    sig.append(coarse.perforated_shell(0.45, 0.0625, None, n))
    rows = coarse.solidification_experiment(A, [U0] * len(sig), sig, periods + [periods[-1]], 0.3, M=n,
                                            walkers=200, mesh=32, seed=0, periods=periods + [None])
    ratios = [r.ratio for r in rows]
    ok = all(r.porous == "pass" for r in rows) and min(ratios) >= 0.85 and all(
        x <= y + 1e-12 for x, y in zip(ratios, ratios[1:]))
    assert report(8, ok, "; ".join(f"{r.label}: {r.porous} (min hit {r.min_hit:.2f}) ratio {r.ratio:.4f}"
                                   for r in rows))


# 9 -----------------------------------------------------------------------------------------

def test_c9_oracle_equivalences(report):
    rng = np.random.default_rng(9)
    cc_bad = 0
    for i in range(1000):
        shape = tuple(rng.integers(2, 9, 3))
        occ = rng.random(shape) < rng.uniform(0.2, 0.8)
        seeds = rng.random(shape) < 0.03
        seeds[tuple(rng.integers(0, n) for n in shape)] = True
        got = seeded_component(SiteSet((0, 0, 0), occ), SiteSet((0, 0, 0), seeds)).bits
        cc_bad += not np.array_equal(got, bfs_component(occ, seeds))

    sd_bad = lam_bad = 0
    for i in range(20):
        a = rng.random(tuple(rng.integers(2, 5, 3))) < 0.6
        b = rng.random(tuple(rng.integers(2, 5, 3))) < 0.6
        a[0, 0, 0] = b[0, 0, 0] = True
        E = shapes.ContinuumShape(4, SiteSet((0, 0, 0), a), None, "a")
        F = shapes.ContinuumShape(4, SiteSet(tuple(rng.integers(-3, 3, 3)), b), None, "b")
        sd_bad += shapes.best_translate(E, F).integer_value * 64 != brute_symdiff(a, b)
        B = shapes._reference_ball(E.volume, 4, 3)
        brute_lam = brute_symdiff(a, B.voxels.bits) / 64 / E.volume
        lam_bad += abs(shapes.fraenkel(E) - brute_lam) > 1e-12

    cov_err = max(np.abs(gff.spectral_covariance((5, 5, 5), x) - killed_green((5, 5, 5), x)).max()
                  for x in np.ndindex(5, 5, 5))
    spots = [tuple(int(v) for v in rng.integers(0, 17, 3)) for _ in range(12)] + [(8, 8, 8), (0, 0, 0)]
    spot_err = max(np.abs(gff.spectral_covariance((17,) * 3, x) - killed_green((17,) * 3, x)).max()
                   for x in spots)
    ok = cc_bad == 0 and sd_bad == 0 and lam_bad == 0 and cov_err < 1e-10 and spot_err < 1e-9
    assert report(9, ok, f"components {1000 - cc_bad}/1000; delta {20 - sd_bad}/20; lambda {20 - lam_bad}/20; "
                  f"covariance 5^3 max err {cov_err:.1e}, 17^3 spot max err {spot_err:.1e}")
