"""Deterministic on-disk artifacts for CLI runs.

Every artifact embeds the run's config hash.  Formats are chosen for
byte-stable output under a fixed config + seed: raw little-endian .npy /
.f64 payloads, JSON with sorted keys, and CSV with fixed float formatting.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .trm import FarFieldOperator, ImagingGrid

__all__ = ["config_hash", "write_json", "write_csv", "write_operator",
           "write_imaging_grid", "read_imaging_grid"]

FORMAT_VERSION = 1


def config_hash(config: dict) -> str:
    """sha256 over the canonical JSON encoding of the resolved config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=str)
        fh.write("\n")


def write_csv(path: Path, header_lines: list[str], columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    rows = len(next(iter(columns.values())))
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for i in range(rows):
            fh.write(",".join(_fmt(columns[k][i]) for k in names) + "\n")


def _fmt(x) -> str:
    if isinstance(x, (str, np.str_)):
        return str(x)
    if isinstance(x, (complex, np.complexfloating)):
        return f"{x.real:.17g}{x.imag:+.17g}j"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_operator(outdir: Path, op: FarFieldOperator, cfg_hash: str) -> None:
    """operator.npy + weights.npy + directions.csv + operator_meta.json."""
    np.save(outdir / "operator.npy", op.matrix)
    np.save(outdir / "weights.npy", op.weights)
    write_csv(outdir / "directions.csv",
              [f"config_hash={cfg_hash}", "direction grid nodes and quadrature weights"],
              {"theta": op.grid.theta, "phi": op.grid.phi, "weight": op.grid.weights})
    write_json(outdir / "operator_meta.json", {
        "format_version": FORMAT_VERSION,
        "config_hash": cfg_hash,
        "n_theta": op.grid.n_theta,
        "n_phi": op.grid.n_phi,
        "noise_level": op.noise_level,
        "omega": op.material.omega,
        "kappa_p": op.material.kappa_p,
        "kappa_s": op.material.kappa_s,
    })


def write_imaging_grid(outdir: Path, img: ImagingGrid, cfg_hash: str,
                       slice_axis: int = 2) -> None:
    """Flat binary f64 voxel values + sidecar text header + a CSV mid-slice."""
    (outdir / "imaging.f64").write_bytes(img.values.astype("<f8").tobytes())
    spec = img.spec
    with open(outdir / "imaging_header.txt", "w") as fh:
        fh.write(f"format_version {FORMAT_VERSION}\n")
        fh.write(f"config_hash {cfg_hash}\n")
        fh.write(f"origin {_fmt(spec.origin[0])} {_fmt(spec.origin[1])} {_fmt(spec.origin[2])}\n")
        fh.write(f"spacing {_fmt(spec.spacing)}\n")
        fh.write(f"counts {spec.counts[0]} {spec.counts[1]} {spec.counts[2]}\n")
        fh.write(f"cutoff {_fmt(img.cutoff)}\n")
        fh.write("order C\n")
    mid = spec.counts[slice_axis] // 2
    sl = [slice(None)] * 3
    sl[slice_axis] = mid
    plane = img.values[tuple(sl)]
    axes = [k for k in range(3) if k != slice_axis]
    ii, jj = np.meshgrid(np.arange(plane.shape[0]), np.arange(plane.shape[1]), indexing="ij")
    c0 = spec.origin[axes[0]] + spec.spacing * ii.ravel()
    c1 = spec.origin[axes[1]] + spec.spacing * jj.ravel()
    write_csv(outdir / "imaging_slice.csv",
              [f"config_hash={cfg_hash}",
               f"slice axis={slice_axis} index={mid}"],
              {"xyz"[axes[0]]: c0, "xyz"[axes[1]]: c1, "value": plane.ravel()})


def read_imaging_grid(outdir: Path):
    """Inverse of write_imaging_grid (values + header dict)."""
    header: dict[str, str] = {}
    for line in (outdir / "imaging_header.txt").read_text().splitlines():
        key, _, rest = line.partition(" ")
        header[key] = rest
    counts = tuple(int(c) for c in header["counts"].split())
    values = np.frombuffer((outdir / "imaging.f64").read_bytes(), dtype="<f8").reshape(counts)
    return values, header
