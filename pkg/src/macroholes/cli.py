"""Command line: ``python -m macroholes <subcommand> ...``.

Every subcommand prints a JSON document (or a CSV table) to stdout and, when
``--out`` is given, writes its files there.  Exit status is 0 iff all
per-sample invariants held.
"""
from __future__ import annotations

import csv
import json
import math
import sys
import warnings
from pathlib import Path

import click

from . import coarse, experiments, gff, interlacements as ri, shapes, store
from .config import ConfigError, ExperimentConfig, apply_thread_env, from_dict, load_config, parse_value
from .lattice import box
from .rng import derive_seed


def _emit(obj):
    click.echo(json.dumps(experiments._clean(obj), indent=1, sort_keys=True))


def _overrides(pairs) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise click.BadParameter(f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = parse_value(v)
    return out


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Macroscopic holes: samplers, capacities, shape metrics and audits."""
    apply_thread_env()


# -- raw samples ---------------------------------------------------------------------------


@main.command("sample-gff")
@click.option("--N", "N", type=int, required=True, help="window radius")
@click.option("--d", type=int, default=3)
@click.option("--buffer", type=float, default=2.0, help="zero-boundary box radius / window radius")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def sample_gff(N, d, buffer, seed, out):
    """Zero-boundary GFF sample observed in B(0, N)."""
    spec = gff.GffSpec(box((0,) * d, N), buffer)
    s = gff.sample_window(spec, seed)
    path = store.save_field(s.values, Path(out) / "field", spec=spec.to_json(), seed=seed,
                            bias_bound=s.bias_bound, window=store.siteset_header(spec.window))
    _emit({"file": str(path), **s.metadata()})


@main.command("sample-ri")
@click.option("--N", "N", type=int, required=True)
@click.option("--u", type=float, required=True)
@click.option("--d", type=int, default=3)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def sample_ri(N, u, d, seed, out):
    """Interlacement at level u in B(0, N): soup summary and trace."""
    soup = ri.sample(ri.RiSpec(u, box((0,) * d, N)), seed)
    path = store.save_soup(soup, Path(out) / "soup")
    _emit({"file": str(path), "trajectories": soup.n_trajectories, "trace_size": soup.trace.count,
           "flagged": soup.flagged, "seed": seed})


@main.command("sample-srw")
@click.option("--N", "N", type=int, required=True)
@click.option("--d", type=int, default=3)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def sample_srw(N, d, seed, out):
    """Trace in B(0, N) of a walk started at the origin."""
    soup = ri.srw_trace(N, seed=seed, d=d, return_soup=True)
    path = store.save_soup(soup, Path(out) / "trace")
    _emit({"file": str(path), "trace_size": soup.trace.count, "flagged": soup.flagged, "seed": seed})


# -- replica runs ----------------------------------------------------------------------------


def _config(config, sets, **flags) -> ExperimentConfig:
    over = {k: v for k, v in flags.items() if v is not None}
    over.update(_overrides(sets))
    try:
        return load_config(config, over) if config else from_dict({}, over)
    except ConfigError as e:
        raise click.UsageError(str(e))


_run_options = [
    click.option("--config", type=click.Path(exists=True), help="YAML experiment file"),
    click.option("--set", "sets", multiple=True, help="override, e.g. --set scales.L0=1"),
    click.option("--model", type=click.Choice(["RI", "SRW", "GFF"], case_sensitive=False)),
    click.option("--N", "N", type=int),
    click.option("--level", type=float, help="u (RI) or alpha (GFF)"),
    click.option("--nu", type=float),
    click.option("--Ltilde0", "Ltilde0", type=int),
    click.option("--replicas", type=int),
    click.option("--seed", type=int),
    click.option("--out", type=click.Path()),
]


def _with_run_options(f):
    for opt in reversed(_run_options):
        f = opt(f)
    return f


def _finish(res: experiments.RunResult):
    _emit({"directory": str(res.directory), "summary": res.summary})
    if not res.ok:
        bad = res.summary["invariant_failures"]
        click.echo(f"invariant violation; first failing seed {bad[0]}", err=True)
        sys.exit(2)


@main.command("hole-stats")
@_with_run_options
def hole_stats(config, sets, model, N, level, nu, Ltilde0, replicas, seed, out):
    """Hole volumes, δ(F, B_ν) and λ(F) across replicas."""
    cfg = _config(config, sets, model=model, N=N, level=level, nu=nu, Ltilde0=Ltilde0, replicas=replicas,
                  seed=seed)
    _finish(experiments.run(cfg, Path(out) if out else None))


@main.command("coarse-grain-audit")
@_with_run_options
def coarse_grain_audit(config, sets, model, N, level, nu, Ltilde0, replicas, seed, out):
    """Density-profile invariants, insulation and segmentation checks per replica."""
    cfg = _config(config, sets, model=model, N=N, level=level, nu=nu, Ltilde0=Ltilde0, replicas=replicas,
                  seed=seed, audit=True)
    _finish(experiments.run(cfg, Path(out) if out else None))


@main.command("tilt-verify")
@click.option("--model", type=click.Choice(["RI", "SRW", "GFF"], case_sensitive=False), required=True)
@click.option("--N", "N", type=int, default=24)
@click.option("--replicas", type=int, default=10)
@click.option("--seed", type=int, default=0)
@click.option("--set", "sets", multiple=True, help="tilt parameter override, e.g. --set crit=8")
@click.option("--out", type=click.Path())
def tilt_verify(model, N, replicas, seed, sets, out):
    """Tilted vs plain hole frequencies with the entropy report."""
    rep = experiments.tilt_verify(model, N, replicas, seed, _overrides(sets))
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "tilt.json").write_text(json.dumps(experiments._clean(rep), indent=1, sort_keys=True))
    _emit(rep)
    if not rep["typical"]:
        sys.exit(3)


# -- deterministic functionals ---------------------------------------------------------------


def _shape(kind, volume, d, resolution, axes, separation):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", shapes.CoarseResolutionWarning)
        if kind == "ball":
            return shapes.ball_from_volume(volume, resolution, d)
        if kind == "cube":
            return shapes.cube_from_volume(volume, resolution, d)
        if kind == "ellipsoid":
            return shapes.ellipsoid(axes, volume, resolution)
        return shapes.dumbbell(volume, resolution, separation, d)


@main.command("capacity")
@click.option("--ball", "kind", flag_value="ball", default=True)
@click.option("--cube", "kind", flag_value="cube")
@click.option("--ellipsoid", "kind", flag_value="ellipsoid")
@click.option("--dumbbell", "kind", flag_value="dumbbell")
@click.option("--volume", type=float, required=True)
@click.option("--d", type=int, default=3)
@click.option("--axes", type=str, default="2,1,1", help="ellipsoid axis ratios")
@click.option("--separation", type=float, default=3.0, help="dumbbell center distance / R_nu")
@click.option("--resolution", type=int, default=16)
@click.option("--M", "M", type=int, default=16, help="coarsest refinement level")
def capacity_cmd(kind, volume, d, axes, separation, resolution, M):
    """Brownian capacity of a built-in shape (normalization cap(B(0,1)) = 2π in d = 3)."""
    ax = [float(a) for a in axes.split(",")]
    E = _shape(kind, volume, d, resolution, ax, separation)
    est = shapes.continuum_capacity(E, M)
    _emit({"shape": E.name, "volume": volume, **est.to_json(), "levels": est.meta.get("levels"),
           "ball_closed_form": shapes.ball_capacity(volume, d)})


@main.command("isoperimetry")
@click.option("--nu", type=float, default=4 * math.pi / 3 / 8)
@click.option("--resolution", type=int, default=16)
@click.option("--M", "M", type=int, default=16)
@click.option("--mu", "mus", type=float, multiple=True, default=(0.05,))
@click.option("--out", type=click.Path())
def isoperimetry(nu, resolution, M, mus, out):
    """η, λ and η/λ^4 over the shape family, plus the coercivity table."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", shapes.CoarseResolutionWarning)
        fam = shapes.shape_family(nu, resolution)
    rows, coer = [], []
    for name, E in fam.items():
        rows.append(dict(shapes.fmp_check(E, M), shape=name))
        for mu in mus:
            coer.append(dict(shapes.coercivity_check(E, min(nu, E.volume), mu, M), shape=name))
    rep = {"nu": nu, "family": rows, "coercivity": coer}
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "isoperimetry.json").write_text(json.dumps(experiments._clean(rep), indent=1))
    _emit(rep)


@main.command("solidify")
@click.option("--radius", type=float, default=0.4, help="radius of the ball A")
@click.option("--shell", type=float, default=0.45, help="inner radius of Σ (= radius of U_0)")
@click.option("--thickness", type=float, default=0.0625)
@click.option("--period", "periods", type=float, multiple=True, default=(0.25, 0.125, 0.0625))
@click.option("--eta", type=float, default=0.3)
@click.option("--resolution", type=int, default=64)
@click.option("--walkers", type=int, default=200)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path())
def solidify(radius, shell, thickness, periods, eta, resolution, walkers, seed, out):
    """cap(Σ)/cap(A) for perforated shells Σ around a ball A (ε = perforation period)."""
    n = resolution
    A = coarse.ball_shape(radius, n)
    U0 = coarse.ball_shape(shell, n)
    sig = [coarse.perforated_shell(shell, thickness, p, n) for p in periods]
    rows = coarse.solidification_experiment(A, [U0] * len(sig), sig, list(periods), eta, M=n,
                                            walkers=walkers, seed=seed, periods=list(periods))
    table = [r.__dict__ for r in rows]
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "solidify.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(table[0]) if table else ["label"], lineterminator="\n")
            w.writeheader()
            w.writerows(table)
    _emit({"rows": table})
    if any(r.porous != "pass" for r in rows):
        sys.exit(4)


if __name__ == "__main__":
    main()
