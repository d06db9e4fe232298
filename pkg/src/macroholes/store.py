"""On-disk formats: a JSON sidecar plus a raw little-endian payload.

``name.json`` holds the header, ``name.bin`` the payload.  Site sets are
bit-packed in C order with little bit order; scalar fields are ``float64``.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Union

import numpy as np

from .continuum import ContinuumShape
from .lattice import SiteSet
from .potential import ScalarField

PathLike = Union[str, os.PathLike]


def _paths(path: PathLike) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".bin")


def _write(path: PathLike, header: dict, payload: bytes) -> Path:
    jp, bp = _paths(path)
    jp.parent.mkdir(parents=True, exist_ok=True)
    # payload first, header last: a header on disk implies a complete payload
    tmp = bp.with_suffix(".bin.part")
    tmp.write_bytes(payload)
    tmp.replace(bp)
    header = dict(header, payload=bp.name, nbytes=len(payload))
    jp.write_text(json.dumps(header, indent=1, sort_keys=True))
    return jp


def _read(path: PathLike) -> tuple[dict, bytes]:
    jp, bp = _paths(path)
    header = json.loads(jp.read_text())
    payload = (jp.parent / header["payload"]).read_bytes()
    if len(payload) != header["nbytes"]:
        raise ValueError(f"{bp} is truncated")
    return header, payload


def siteset_header(S: SiteSet) -> dict:
    return {"d": S.d, "anchor": [int(a) for a in S.anchor], "dims": [int(n) for n in S.dims],
            "count": S.count, "encoding": "bitpack-le"}


def save_siteset(S: SiteSet, path: PathLike, **extra) -> Path:
    return _write(path, dict(siteset_header(S), **extra), np.packbits(S.bits.ravel(), bitorder="little").tobytes())


def _unpack(header: dict, payload: bytes) -> SiteSet:
    if header.get("encoding") != "bitpack-le":
        raise ValueError("unsupported site-set encoding")
    dims = tuple(header["dims"])
    n = int(np.prod(dims))
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n, bitorder="little").astype(bool)
    S = SiteSet(tuple(header["anchor"]), bits.reshape(dims))
    if S.count != header["count"]:
        raise ValueError("site count does not match the header")
    return S


def load_siteset(path: PathLike) -> SiteSet:
    return _unpack(*_read(path))


def save_shape(E: ContinuumShape, path: PathLike) -> Path:
    return save_siteset(E.voxels, path, resolution=E.resolution, name=E.name)


def load_shape(path: PathLike) -> ContinuumShape:
    header, payload = _read(path)
    return ContinuumShape(int(header["resolution"]), _unpack(header, payload), None, header.get("name", ""))


def save_field(F: ScalarField, path: PathLike, **extra) -> Path:
    header = {"domain": siteset_header(F.domain), "dtype": "f64-le",
              "domain_bits": np.packbits(F.domain.bits.ravel(), bitorder="little").tobytes().hex()}
    return _write(path, dict(header, **extra), np.ascontiguousarray(F.values, dtype="<f8").tobytes())


def load_field(path: PathLike) -> ScalarField:
    header, payload = _read(path)
    if header.get("dtype") != "f64-le":
        raise ValueError("unsupported field dtype")
    dom = _unpack(header["domain"], bytes.fromhex(header["domain_bits"]))
    vals = np.frombuffer(payload, dtype="<f8").reshape(dom.dims).copy()
    return ScalarField(dom, vals)


def save_soup(soup, path: PathLike) -> Path:
    """Entries, per-trajectory path lengths and stop reasons as JSON; the trace as a site set."""
    reasons = [[seg.stop_reason.value for seg in traj] for traj in soup.trajectories]
    return save_siteset(soup.trace, path, u=soup.u, entries=np.asarray(soup.entries).tolist(),
                        path_lengths=np.asarray(soup.path_lengths).tolist(), stop_reasons=reasons,
                        flagged=bool(soup.flagged), window=siteset_header(soup.window))
