"""Replica runs: sampling, hole extraction, shape metrics and audits, written
as ``records.csv`` + ``summary.json`` + grid dumps.

Replica ``i`` uses seed ``derive_seed(root, i)``, so records do not depend on
how many replicas were requested.  Wall-clock timings go to ``timings.csv``,
kept apart so that ``records.csv`` is byte-identical across re-runs.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import coarse, gff, interlacements as ri, store, tilt
from .config import ExperimentConfig, ModelKind
from .lattice import Connectivity, SiteSet, box, clip, dilate, filling, seeded_component, sphere
from .potential import g00
from .rng import derive_seed
from .shapes import CoarseResolutionWarning, ball_from_volume, best_translate, fraenkel

COLUMNS = [
    ("replica", int), ("seed", int), ("hole_volume", int), ("hole_fraction", float), ("hole_event", int),
    ("filling_volume", float), ("delta", float), ("lambda", float), ("cluster_size", int),
    ("medium_fraction", float), ("origin_in_medium", int), ("audit_determinism", str),
    ("audit_shape", str), ("invariants_ok", int),
]


class InvariantViolation(RuntimeError):
    def __init__(self, seed: int, what: str):
        super().__init__(f"seed {seed}: {what}")
        self.seed = seed
        self.what = what


# -- one replica --------------------------------------------------------------------------


def sample_medium(cfg: ExperimentConfig, seed: int) -> SiteSet:
    """The medium inside ``B(0, N)``: vacant set (RI, SRW) or excursion set ``{φ ≥ α}`` (GFF)."""
    d, N = cfg.d, cfg.N
    window = box((0,) * d, N)
    if cfg.model is ModelKind.RI:
        return ri.vacant(ri.sample(ri.RiSpec(cfg.level, window, keep_paths=False), seed))
    if cfg.model is ModelKind.SRW:
        return window - clip(ri.srw_trace(N, seed=seed, d=d), window)
    spec = gff.GffSpec(window, cfg.gff_buffer)
    return gff.excursion_set(gff.sample_window(spec, seed), cfg.level)


def _conn(cfg) -> Connectivity:
    return Connectivity.NEAREST if cfg.connectivity == "nearest" else Connectivity.STAR


def hole_of(medium: SiteSet, N: int, Ltilde0: int, connectivity=Connectivity.NEAREST):
    """Boundary cluster, its ``L̃_0``-thickening in ``B(0, N)`` and the hole."""
    window = box((0,) * medium.d, N)
    C = seeded_component(clip(medium, window), sphere(N, medium.d), connectivity)
    Ct = clip(dilate(C.padded(Ltilde0), Ltilde0), window) if Ltilde0 else C
    return C, Ct, window - Ct


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def run_replica(cfg: ExperimentConfig, i: int, scales: Optional[coarse.ScaleSet] = None,
                dump_dir: Optional[Path] = None) -> dict:
    seed = derive_seed(cfg.seed, i)
    d, N = cfg.d, cfg.N
    medium = sample_medium(cfg, seed)
    C, Ct, W = hole_of(medium, N, cfg.Ltilde0, _conn(cfg))
    rec = {"replica": i, "seed": seed, "hole_volume": W.count, "hole_fraction": W.count / (2 * N + 1) ** d,
           "hole_event": int(W.count >= cfg.nu * N ** d), "cluster_size": C.count,
           "medium_fraction": medium.count / (2 * N + 1) ** d,
           "origin_in_medium": int((0,) * d in medium), "audit_determinism": "", "audit_shape": ""}
    problems = []
    if (W & Ct).count:
        problems.append("hole meets the thickened cluster")
    if W.count:
        F = filling(W, N)
        rec["filling_volume"] = F.volume
        if F.volume < W.count / N ** d:
            problems.append("filling smaller than the hole")
        if not F.contains_points(W.sites() / N).all():
            problems.append("filling misses a hole point")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CoarseResolutionWarning)
            B = ball_from_volume(cfg.nu, N, d)
        rec["delta"] = best_translate(F, B).value
        rec["lambda"] = fraenkel(F)
    else:
        rec.update(filling_volume=0.0, delta=float("nan"), **{"lambda": float("nan")})
    if cfg.audit:
        rep = coarse.run_pipeline(medium, N, scales, cfg.nu)
        rec["audit_determinism"] = str(int(rep.determinism_ok))
        rec["audit_shape"] = "" if rep.shape_ok is None else str(int(rep.shape_ok))
        if not rep.determinism_ok:
            problems.append(f"coarse-grain determinism check failed: {rep}")
        if rep.shape_ok is False:
            problems.append(f"segmentation shape check failed: {rep}")
    rec["invariants_ok"] = int(not problems)
    rec["problems"] = problems
    if dump_dir is not None:
        tag = f"replica-{i:04d}"
        store.save_siteset(medium, dump_dir / f"{tag}-medium", seed=seed)
        store.save_siteset(W, dump_dir / f"{tag}-hole", seed=seed)
        if W.count:
            store.save_shape(filling(W, N), dump_dir / f"{tag}-filling")
    return rec


# -- summaries ----------------------------------------------------------------------------


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    if not len(x):
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("nan")
    return float(x.mean()), se


def summarize(rows: list[dict], cfg: ExperimentConfig) -> dict:
    """Aggregates recomputable from the typed rows of ``records.csv``."""
    n = len(rows)
    out = {"replicas": n, "config": cfg.to_json(), "config_digest": cfg.digest()}
    for key in ("hole_event", "hole_fraction", "filling_volume", "delta", "lambda", "medium_fraction",
                "origin_in_medium"):
        m, se = _mean_se([r[key] for r in rows]) if n else (float("nan"), float("nan"))
        out[key] = {"mean": m, "stderr": se}
    if cfg.model is ModelKind.RI:
        g = g00(cfg.d)
        occ = 1 - out["origin_in_medium"]["mean"] if n else float("nan")
        oracle = 1 - math.exp(-cfg.level / g)
        se = out["origin_in_medium"]["stderr"]
        out["occupation_density"] = {"estimate": occ, "stderr": se, "oracle": oracle, "g00": g,
                                     "within_3se": bool(n > 1 and abs(occ - oracle) <= 3 * se)}
    fails = [r for r in rows if not r["invariants_ok"]]
    out["invariant_failures"] = [r["seed"] for r in fails]
    out["ok"] = not fails
    return out


def _clean(obj):
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def read_records(path) -> list[dict]:
    """Typed rows of a ``records.csv``."""
    types = dict(COLUMNS)
    with open(path, newline="") as fh:
        return [{k: (types[k](v) if types[k] is not str else v) if v != "nan" else float("nan")
                 for k, v in row.items()} for row in csv.DictReader(fh)]


@dataclass
class RunResult:
    directory: Path
    summary: dict
    rows: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.summary["ok"])


def _scales_for(cfg: ExperimentConfig) -> Optional[coarse.ScaleSet]:
    if not cfg.audit:
        return None
    sc = dict(cfg.scales)
    if not cfg.Ltilde0:
        raise ValueError("the coarse-graining audit needs Ltilde0 > 0")
    return coarse.make_scales(cfg.N, K=sc.pop("K", 100), gamma=sc.pop("gamma", 1.0), Ltilde0=cfg.Ltilde0,
                              d=cfg.d, **sc)


def run(cfg: ExperimentConfig, out_dir: Optional[Path] = None, dumps: int = 1, fail_fast: bool = False) -> RunResult:
    """Run all replicas and write ``records.csv``, ``timings.csv``, ``summary.json`` and grids.

    Files are written to a ``.part`` name and renamed when complete.
    """
    out = Path(out_dir) if out_dir is not None else cfg.output_dir(f"runs/{cfg.model.value.lower()}-{cfg.digest()}")
    out.mkdir(parents=True, exist_ok=True)
    grids = out / "grids"
    scales = _scales_for(cfg)
    rows, times = [], []
    for i in range(cfg.replicas):
        t0 = time.perf_counter()
        rec = run_replica(cfg, i, scales, grids if i < dumps else None)
        times.append((i, rec["seed"], time.perf_counter() - t0))
        rows.append(rec)
        if fail_fast and rec["problems"]:
            break
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([c for c, _ in COLUMNS])
    for r in rows:
        w.writerow([_fmt(r[c]) for c, _ in COLUMNS])
    _atomic(out / "records.csv", buf.getvalue())
    _atomic(out / "timings.csv", "replica,seed,seconds\n" + "".join(f"{i},{s},{t:.4f}\n" for i, s, t in times))
    summary = summarize(read_records(out / "records.csv"), cfg)
    summary["problems"] = {str(r["seed"]): r["problems"] for r in rows if r["problems"]}
    _atomic(out / "summary.json", json.dumps(_clean(summary), indent=1, sort_keys=True))
    return RunResult(out, summary, rows)


def _atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text)
    tmp.replace(path)


# -- tilted vs plain -----------------------------------------------------------------------

TILT_DEFAULTS = {
    "RI": {"u": 0.5, "crit": 8.0, "eps": 2.0},
    "SRW": {"crit": 10.0, "eps": 2.0},
    "GFF": {"alpha": -1.0, "crit": 2.0, "eps": 0.5, "buffer": 2.0},
}
GEOMETRY_DEFAULTS = {"R_nu": 0.4, "delta": 0.2, "eta": 0.1, "r": 1.2, "entrance_margin": 2}


def tilt_verify(model: str, N: int = 24, replicas: int = 10, seed: int = 0, params: Optional[dict] = None,
                d: int = 3) -> dict:
    """Hole-event frequencies under the tilted and the plain measure, the tilt
    cost and the resulting entropy lower bound on the plain probability.

    The event is disconnection of ``Γ_N`` (boundary of the blow-up of
    ``B(0, (R_ν + δ/2) N)``) from ``S_level`` in the medium.
    """
    model = model.upper()
    p = dict(GEOMETRY_DEFAULTS, **TILT_DEFAULTS[model], **(params or {}))
    h = tilt.solve_equilibrium_profile(p["R_nu"], p["delta"], p["r"], d)
    he = tilt.mollify(h, p["eta"], p["delta"])
    G = tilt.gamma_N_boundary(p["R_nu"], p["delta"], N, d)
    frame = box((0,) * d, math.ceil((p["r"] + p["eta"]) * N) + int(p["entrance_margin"]))
    hits = {"tilted": 0, "plain": 0}
    extra = {}
    if model == "RI":
        prof = tilt.profile_ri(p["u"], p["crit"], p["eps"], he, N)
        spec = ri.RiSpec(p["u"], box((0,) * d, N), entrance=frame, keep_paths=False)
        H = tilt.ri_entropy_surrogate(prof)
        level = N - 1
        for i in range(replicas):
            s = derive_seed(seed, i)
            hits["tilted"] += tilt.disconnection_event(ri.vacant(ri.tilted_sample(spec, prof.f, s)), G, level)
            hits["plain"] += tilt.disconnection_event(ri.vacant(ri.sample(spec, s)), G, level)
        H_label = "surrogate u E(f, f)"
    elif model == "SRW":
        hN = tilt.profile_walk(he, N)
        T = tilt.walk_time_horizon(hN, p["crit"], p["eps"])
        H = tilt.walk_entropy_surrogate(hN, p["crit"], p["eps"])
        level = N - 1
        ll = []
        for i in range(replicas):
            s = derive_seed(seed, i)
            w = tilt.tilted_walk_sample(hN, T, N, s)
            ll.append(w.log_likelihood)
            hits["tilted"] += tilt.disconnection_event(w.trace.complement(), G, level)
            tr = ri.srw_trace(N, seed=s, d=d)
            hits["plain"] += tilt.disconnection_event(tr.complement(), G, level)
        extra["log_likelihood_mean"] = float(np.mean(ll)) if ll else float("nan")
        extra["time_horizon"] = T
        H_label = "surrogate (u** + eps) E(h, h)"
    elif model == "GFF":
        prof = tilt.profile_gff(p["alpha"], p["crit"], p["eps"], he, N)
        spec = gff.GffSpec(frame, p["buffer"])
        H = tilt.gff_entropy(prof.f, N).H
        level = N
        for i in range(replicas):
            s = derive_seed(seed, i)
            hits["tilted"] += tilt.disconnection_event(gff.excursion_set(gff.tilt_sample(spec, prof.f, s),
                                                                         p["alpha"]), G, level)
            hits["plain"] += tilt.disconnection_event(gff.excursion_set(gff.sample_window(spec, s),
                                                                        p["alpha"]), G, level)
        H_label = "exact E(f, f)/2"
    else:
        raise ValueError(f"unknown model {model!r}")
    pt = hits["tilted"] / replicas if replicas else float("nan")
    pp = hits["plain"] / replicas if replicas else float("nan")
    out = {"model": model, "N": N, "replicas": replicas, "params": p, "tilted_frequency": pt,
           "plain_frequency": pp, "entropy": H, "entropy_kind": H_label,
           "log_lower_bound": tilt.log_entropy_lower_bound(pt, H) if pt > 0 else float("-inf"),
           "typical": bool(replicas and pt >= 0.9 and pp <= 0.1)}
    out.update(extra)
    return out
