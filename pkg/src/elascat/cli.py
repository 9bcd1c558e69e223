"""Batch front end: scene ingestion, forward runs, operator assembly, imaging.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 I/O error.
Artifacts are deterministic for a fixed config + seed and embed the config
hash; see artifacts.py for the formats.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .multiscat import Scene, SceneError, SceneOperator, SolveError, load_scene, solve_forward
from .quadrature import DirectionGrid
from .scatmat import ResonanceError, ScatteringFileError, far_field_blocks, \
    small_sphere_eigenvalues, sphere_scattering_blocks
from .specfun import mode_linear_index
from .trm import (add_noise, assemble_far_field_operator, default_imaging_spec,
                  eigen_relation_residual, far_field_eigenvalues, find_local_maxima,
                  fit_circle, imaging_function, limit_far_field_operator,
                  selective_focusing_kernels, time_reversal_spectrum)
from .wavebasis import PlaneWaveSpec, herglotz_eval

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
_TASKS = ("forward", "operator", "image", "asymptotics", "selective")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elascat",
                                description="Elastic multiple scattering and time-reversal imaging")
    p.add_argument("--scene", required=True, help="scene TOML file")
    p.add_argument("--task", required=True, choices=_TASKS)
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--tol", type=float, default=1e-6, help="forward-solver residual tolerance")
    p.add_argument("--ntheta", type=int, default=11, help="polar direction count")
    p.add_argument("--nphi", type=int, default=21, help="azimuthal direction count")
    p.add_argument("--noise", type=float, default=0.05, help="relative far-field noise level")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--cutoff", type=float, default=1.0, help="imaging reconstruction cut-off")
    p.add_argument("--restart", type=int, default=50, help="GMRES restart length")
    p.add_argument("--maxiter", type=int, default=500, help="GMRES max inner iterations")
    p.add_argument("--method", choices=("direct", "gmres"), default="direct",
                   help="multi-rhs strategy for operator assembly")
    p.add_argument("--incident-direction", default="0,0,1", help="plane-wave direction (forward task)")
    p.add_argument("--incident-polarization", default="1,0,0", help="plane-wave polarization")
    p.add_argument("--voxels-per-wavelength", type=int, default=8)
    p.add_argument("--margin-wavelengths", type=float, default=1.5)
    p.add_argument("--slice-axis", type=int, default=2, choices=(0, 1, 2))
    p.add_argument("--radius", type=float, default=None,
                   help="override radius for the asymptotics table")
    p.add_argument("--nmax", type=int, default=2, help="largest order in the asymptotics table")
    return p


def _vec(text: str) -> np.ndarray:
    parts = [float(t) for t in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated floats, got {text!r}")
    return np.array(parts)


def _resolved_config(args, scene_path: Path) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)}
    cfg["scene_sha256"] = hashlib.sha256(scene_path.read_bytes()).hexdigest()
    return cfg


def run(args) -> int:
    scene_path = Path(args.scene)
    if not scene_path.exists():
        raise SceneError(f"scene file not found: {scene_path}")
    scene = load_scene(scene_path)
    cfg = _resolved_config(args, scene_path)
    cfg_hash = artifacts.config_hash(cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(outdir / "config.json", {"config_hash": cfg_hash, **cfg})

    if args.task == "forward":
        _task_forward(args, scene, outdir, cfg_hash)
    elif args.task == "operator":
        _task_operator(args, scene, outdir, cfg_hash)
    elif args.task == "image":
        _task_image(args, scene, outdir, cfg_hash)
    elif args.task == "asymptotics":
        _task_asymptotics(args, scene, outdir, cfg_hash)
    else:
        _task_selective(args, scene, outdir, cfg_hash)
    return EXIT_OK


def _incident(args) -> PlaneWaveSpec:
    d = _vec(args.incident_direction)
    n = np.linalg.norm(d)
    if n == 0:
        raise SceneError("incident direction must be nonzero")
    return PlaneWaveSpec(d / n, _vec(args.incident_polarization))


def _task_forward(args, scene, outdir, cfg_hash):
    report = solve_forward(scene, _incident(args), tol=args.tol, restart=args.restart,
                           maxiter=args.maxiter)
    stacked = np.stack([c.data for c in report.outgoing])
    np.save(outdir / "outgoing_coefficients.npy", stacked)
    artifacts.write_json(outdir / "report.json", {
        "config_hash": cfg_hash,
        "task": "forward",
        "iterations": report.iterations,
        "relative_residual": report.relative_residual,
        "boundary_residual": report.boundary_residual,
        "converged": report.converged,
        "n_particles": scene.n_particles,
        "truncation": scene.order_max,
    })


def _assemble(args, scene):
    grid = DirectionGrid.build(args.ntheta, args.nphi)
    op = assemble_far_field_operator(scene, grid, tol=args.tol, method=args.method)
    return add_noise(op, args.noise, seed=args.seed)


def _task_operator(args, scene, outdir, cfg_hash):
    op = _assemble(args, scene)
    artifacts.write_operator(outdir, op, cfg_hash)
    spec = time_reversal_spectrum(op)
    fe = far_field_eigenvalues(op)
    artifacts.write_csv(outdir / "spectrum.csv",
                        [f"config_hash={cfg_hash}",
                         f"normality_defect={spec.normality_defect:.6e}"],
                        {"index": np.arange(fe.size),
                         "time_reversal_eigenvalue": spec.eigenvalues,
                         "far_field_eigenvalue": fe})
    nz = fe[np.abs(fe) > 1e-6 * np.abs(fe[0])] if fe.size and np.abs(fe[0]) > 0 else fe
    meta = {"config_hash": cfg_hash, "task": "operator",
            "normality_defect": spec.normality_defect}
    if nz.size >= 3:
        center, radius, resid = fit_circle(nz)
        meta["eigenvalue_circle"] = {
            "center_re": center.real, "center_im": center.imag,
            "radius": radius, "relative_residual": resid,
            "n_points": int(nz.size),
        }
    artifacts.write_json(outdir / "report.json", meta)


def _task_image(args, scene, outdir, cfg_hash):
    op = _assemble(args, scene)
    spec = time_reversal_spectrum(op)
    ispec = default_imaging_spec(scene.centers, scene.material,
                                 margin_wavelengths=args.margin_wavelengths,
                                 voxels_per_wavelength=args.voxels_per_wavelength)
    img = imaging_function(spec.top_kernel, scene.material, ispec, cutoff=args.cutoff)
    artifacts.write_imaging_grid(outdir, img, cfg_hash, slice_axis=args.slice_axis)
    lam_s = 2 * np.pi / scene.material.kappa_s
    peaks = find_local_maxima(img, n_peaks=64,
                              min_value_frac=min(args.cutoff / max(img.values.max(), 1e-300), 1.0),
                              min_separation=lam_s / 2)
    artifacts.write_csv(outdir / "peaks.csv",
                        [f"config_hash={cfg_hash}"],
                        {"x": np.array([p[0][0] for p in peaks]),
                         "y": np.array([p[0][1] for p in peaks]),
                         "z": np.array([p[0][2] for p in peaks]),
                         "value": np.array([p[1] for p in peaks])})
    artifacts.write_json(outdir / "report.json", {
        "config_hash": cfg_hash, "task": "image",
        "top_eigenvalue": float(spec.eigenvalues[0]),
        "normality_defect": spec.normality_defect,
        "imaging_max": float(img.values.max()),
        "n_peaks_above_cutoff": len(peaks),
        "voxels_marked": int(img.mask().sum()),
    })


def _task_asymptotics(args, scene, outdir, cfg_hash):
    mat = scene.material
    radius = args.radius if args.radius is not None else scene.particles[0].radius
    blocks = far_field_blocks(sphere_scattering_blocks(radius, mat, args.nmax), mat)
    rows = {"n": [], "label": [], "asymptotic": [], "block_eigenvalue": [], "relative_error": []}
    for n in range(args.nmax + 1):
        block = blocks[mode_linear_index(n, 0)]
        ev = np.linalg.eigvals(block)
        ev = ev[np.argsort(-np.abs(ev))]
        if n == 0:
            lam = small_sphere_eigenvalues(0, radius, mat)
            pairs = [("lambda_00", lam, ev[0])]
        else:
            l1, l2, l3 = small_sphere_eigenvalues(n, radius, mat)
            by_l2 = np.argmin(np.abs(ev - l2))
            rest = [k for k in range(3) if k != by_l2]
            pairs = [("lambda1", l1, ev[rest[0]]), ("lambda2", l2, ev[by_l2]),
                     ("lambda3", l3, ev[rest[1]])]
        for label, lam, e in pairs:
            rows["n"].append(n)
            rows["label"].append(label)
            rows["asymptotic"].append(lam)
            rows["block_eigenvalue"].append(e)
            rows["relative_error"].append(abs(lam - e) / max(abs(e), 1e-300))
    artifacts.write_csv(outdir / "asymptotics.csv",
                        [f"config_hash={cfg_hash}", f"radius={radius!r}"],
                        {k: np.array(v) for k, v in rows.items()})
    artifacts.write_json(outdir / "report.json", {
        "config_hash": cfg_hash, "task": "asymptotics", "radius": radius,
        "max_relative_error_leading": max(rows["relative_error"]),
    })


def _task_selective(args, scene, outdir, cfg_hash):
    mat = scene.material
    grid = DirectionGrid.build(args.ntheta, args.nphi)
    centers = scene.centers
    frames = [np.eye(3)] * scene.n_particles
    tensors = [np.eye(3)] * scene.n_particles
    kernels = selective_focusing_kernels(centers, frames, mat, grid)
    op0 = limit_far_field_operator(centers, tensors, mat, grid)
    self_val = 4 * np.pi * (mat.kappa_p**2 + 2 * mat.kappa_s**2) / 3
    rows = {"particle": [], "axis": [], "self_value_re": [], "self_value_expected": [],
            "eigen_relation_residual": []}
    for l in range(scene.n_particles):
        for i in range(3):
            k = kernels[3 * l + i]
            u = herglotz_eval(k, mat, centers[l])
            rows["particle"].append(l)
            rows["axis"].append(i)
            rows["self_value_re"].append(u[i].real)
            rows["self_value_expected"].append(self_val)
            rows["eigen_relation_residual"].append(eigen_relation_residual(op0, k, 1.0))
    artifacts.write_csv(outdir / "selective.csv",
                        [f"config_hash={cfg_hash}"],
                        {k: np.array(v) for k, v in rows.items()})
    artifacts.write_json(outdir / "report.json", {
        "config_hash": cfg_hash, "task": "selective",
        "max_eigen_relation_residual": max(rows["eigen_relation_residual"]),
    })


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return run(args)
    except (SceneError, ValueError) as exc:
        _emit_error(args, "config", exc)
        return EXIT_CONFIG
    except (SolveError, ResonanceError) as exc:
        _emit_error(args, "solver", exc)
        return EXIT_SOLVER
    except (ScatteringFileError, OSError) as exc:
        _emit_error(args, "io", exc)
        return EXIT_IO


def _emit_error(args, kind: str, exc: Exception) -> None:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    try:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        artifacts.write_json(outdir / "error.json", payload)
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
