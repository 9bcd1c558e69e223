"""Forward multiple-scattering solver for well-separated rigid particles.

The unknowns are the stacked outgoing coefficients of all particles.  With S
the block-diagonal scattering matrices and T the pairwise translation map
(outgoing of particle j -> incoming of particle l via evaluation on the
target sphere plus surface projection), the preconditioned system

    (I - S T) x = S rhs

is solved by restarted GMRES.  The plain form S^{-1} x - T x = rhs is kept
only for the conditioning comparison tests.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .quadrature import DirectionGrid, SphereGrid, sphere_grid_for_order
from .scatmat import (ResonanceError, ScatteringMatrixBlocks, load_scattering_blocks,
                      sphere_scattering_blocks)
from .specfun import AngularTable, mode_arrays, mode_count, radial_table
from .wavebasis import (CoefficientVector, DirectionTables, HerglotzKernel, Material,
                        PlaneWaveSpec, basis_matrices, eval_expansion, herglotz_eval,
                        herglotz_incoming_coeffs, plane_wave_coeffs)

__all__ = [
    "Particle",
    "Scene",
    "SceneError",
    "SolveError",
    "SolveReport",
    "load_scene",
    "project_incoming",
    "project_outgoing",
    "translate_outgoing_to_incoming",
    "SceneOperator",
    "solve_forward",
    "eval_total_field",
    "boundary_residual",
]


class SceneError(ValueError):
    """Invalid scene geometry or configuration."""


class SolveError(RuntimeError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, message: str, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


@dataclass(frozen=True)
class Particle:
    center: np.ndarray
    radius: float
    matrix_file: str | None = None   # None -> analytic rigid sphere


@dataclass(frozen=True)
class Scene:
    particles: tuple[Particle, ...]
    material: Material
    order_max: int

    def __post_init__(self):
        if self.order_max < 1:
            raise SceneError(f"truncation order must be >= 1, got {self.order_max}")
        for p in self.particles:
            if p.radius <= 0:
                raise SceneError(f"particle radius must be positive, got {p.radius}")
        for i, a in enumerate(self.particles):
            for b in self.particles[i + 1:]:
                gap = np.linalg.norm(a.center - b.center)
                if gap <= a.radius + b.radius:
                    raise SceneError(
                        f"enclosing spheres overlap: centers {a.center} / {b.center}, "
                        f"|distance| = {gap:.6g} <= R1 + R2 = {a.radius + b.radius:.6g}")

    @property
    def n_particles(self) -> int:
        return len(self.particles)

    @property
    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.particles])

    @property
    def min_center_distance(self) -> float:
        if self.n_particles < 2:
            return np.inf
        c = self.centers
        d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
        return float(d[~np.eye(self.n_particles, dtype=bool)].min())


def load_scene(path) -> Scene:
    """Scene from a TOML file; see scenes/ for the schema."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise SceneError(f"scene file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise SceneError(f"scene file {path} is not valid TOML: {exc}")
    try:
        m = doc["material"]
        material = Material.from_wavenumbers(
            float(m["kappa_p"]), float(m["kappa_s"]), float(m.get("omega", 1.0)))
        order_max = int(doc["truncation"])
        particles = []
        for entry in doc["particles"]:
            mf = entry.get("matrix_file")
            if mf is not None:
                mf = str((path.parent / mf).resolve())
            particles.append(Particle(
                center=np.asarray(entry["center"], dtype=float),
                radius=float(entry["radius"]),
                matrix_file=mf,
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(f"scene file {path} is malformed: {exc!r}")
    return Scene(tuple(particles), material, order_max)


# ---------------------------------------------------------------------------
# surface projections
# ---------------------------------------------------------------------------

def _projection_factors(kind: str, material: Material, radius: float, order_max: int):
    """Per-order reciprocals for the (a, b, c) surface projections.

    Raises ResonanceError when a modal denominator is below tolerance; the
    curl-based fallback covers the shear channels in that case.
    """
    ks, kp = material.kappa_s, material.kappa_p
    xs, xp = ks * radius, kp * radius
    tab = radial_table("regular_j" if kind == "regular" else "outgoing_h", order_max, xs)
    tabp = radial_table("regular_j" if kind == "regular" else "outgoing_h", order_max, xp)
    n = np.arange(order_max + 1)
    nn = n * (n + 1.0)
    den_a = tab.values + xs * tab.derivatives
    den_b = tab.values
    den_c = kp * tabp.derivatives
    # zero-proximity scales: a denominator is resonant only when it is tiny
    # relative to its own constituents, not merely small (evanescent orders
    # have exponentially small but perfectly usable denominators)
    scale_a = np.abs(tab.values) + np.abs(xs * tab.derivatives)
    scale_b = np.abs(tab.values) + xs * np.abs(tab.derivatives)
    # j_n'' from the spherical Bessel equation
    jpp = -2.0 * tabp.derivatives / xp - (1.0 - nn / xp**2) * tabp.values
    scale_c = kp * (np.abs(tabp.derivatives) + xp * np.abs(jpp))
    for k in range(order_max + 1):
        if k >= 1 and abs(den_a[k]) < 1e-12 * scale_a[k]:
            raise ResonanceError(k, "a", den_a[k])
        if k >= 1 and abs(den_b[k]) < 1e-12 * scale_b[k]:
            raise ResonanceError(k, "b", den_b[k])
        if abs(den_c[k]) < 1e-12 * scale_c[k]:
            raise ResonanceError(k, "c", den_c[k])
    with np.errstate(divide="ignore", invalid="ignore"):
        fac_a = np.where(n > 0, 1j * xs / (nn * den_a), 0.0)
        fac_b = np.where(n > 0, -1.0 / (nn * den_b), 0.0)
    fac_c = 1.0 / den_c
    return fac_a, fac_b, fac_c


class SphereProjector:
    """Projection of sampled surface fields onto modal coefficients.

    Built once per (grid, order); exposes matrices taking shear and
    compressional samples on the grid to the (a, b) and c channels.
    """

    def __init__(self, grid: SphereGrid, material: Material, order_max: int, kind: str):
        self.grid = grid
        self.material = material
        self.order_max = order_max
        self.kind = kind
        tab = AngularTable(order_max, grid.theta, grid.phi)
        self.table = tab
        rhat, that, phat = grid.triads()
        w = grid.solid_angle_weights
        gradY = np.conj(tab.dtheta[:, :, None] * that[None] + tab.dphi_over_sin[:, :, None] * phat[None])
        crossY = np.conj(tab.dtheta[:, :, None] * phat[None] - tab.dphi_over_sin[:, :, None] * that[None])
        radY = np.conj(tab.Y[:, :, None]) * rhat[None]
        fac_a, fac_b, fac_c = _projection_factors(kind, material, grid.radius, order_max)
        n_of, _ = mode_arrays(order_max)
        # (P, Q, 3) kernels including quadrature weights and mode factors
        self.K_a = fac_a[n_of, None, None] * gradY * w[None, :, None]
        self.K_b = fac_b[n_of, None, None] * crossY * w[None, :, None]
        self.K_c = fac_c[n_of, None, None] * radY * w[None, :, None]

    def project(self, shear_samples: np.ndarray, comp_samples: np.ndarray) -> np.ndarray:
        data = np.empty((mode_count(self.order_max), 3), dtype=complex)
        data[:, 0] = np.einsum("pqc,qc->p", self.K_a, shear_samples)
        data[:, 1] = np.einsum("pqc,qc->p", self.K_b, shear_samples)
        data[:, 2] = np.einsum("pqc,qc->p", self.K_c, comp_samples)
        return data


def project_incoming(shear_samples, comp_samples, grid: SphereGrid, material: Material,
                     order_max: int) -> CoefficientVector:
    """Modal (a, b, c) from sampled shear / compressional fields on a sphere grid."""
    proj = SphereProjector(grid, material, order_max, "regular")
    return CoefficientVector(order_max, "incoming", proj.project(shear_samples, comp_samples))


def project_outgoing(shear_samples, comp_samples, grid: SphereGrid, material: Material,
                     order_max: int) -> CoefficientVector:
    """Outgoing-channel projections: identical up to h_n replacing j_n."""
    proj = SphereProjector(grid, material, order_max, "outgoing")
    return CoefficientVector(order_max, "outgoing", proj.project(shear_samples, comp_samples))


# ---------------------------------------------------------------------------
# translations
# ---------------------------------------------------------------------------

def translation_matrix(material: Material, order_max: int, source_center, target: SphereGrid,
                       projector: SphereProjector | None = None) -> np.ndarray:
    """Dense map from outgoing coefficients at ``source_center`` to incoming
    coefficients on the target sphere, shape (3P, 3P).

    Shear samples feed only the (a, b) channels and compressional samples
    only c, so the map keeps the block sparsity of the coupled system.
    """
    P = mode_count(order_max)
    projector = projector or SphereProjector(target, material, order_max, "regular")
    E_s, E_c = basis_matrices(material, order_max, "outgoing", source_center, target.points)
    T = np.zeros((P, 3, P, 3), dtype=complex)
    T[:, 0, :, :2] = np.einsum("pqc,qcPk->pPk", projector.K_a, E_s)
    T[:, 1, :, :2] = np.einsum("pqc,qcPk->pPk", projector.K_b, E_s)
    T[:, 2, :, 2] = np.einsum("pqc,qcP->pP", projector.K_c, E_c)
    return T.reshape(3 * P, 3 * P)


def translate_outgoing_to_incoming(outgoing: CoefficientVector, material: Material,
                                   source_center, target_center, target_radius: float,
                                   n_theta: int | None = None, n_phi: int | None = None
                                   ) -> CoefficientVector:
    """Re-expand one particle's outgoing field as another's incoming field."""
    source_center = np.asarray(source_center, dtype=float)
    target_center = np.asarray(target_center, dtype=float)
    gap = np.linalg.norm(source_center - target_center)
    if gap == 0.0:
        raise SceneError("translation requires distinct source and target centers")
    if gap <= target_radius:
        raise SceneError("source center lies inside the target sphere")
    grid = sphere_grid_for_order(outgoing.order_max, target_center, target_radius, n_theta, n_phi)
    u_s, u_p = eval_expansion(outgoing, material, source_center, grid.points)
    return project_incoming(u_s, u_p, grid, material, outgoing.order_max)


# ---------------------------------------------------------------------------
# scene operator and solver
# ---------------------------------------------------------------------------

@dataclass
class SolveReport:
    outgoing: list[CoefficientVector]
    iterations: int
    relative_residual: float
    boundary_residual: float
    converged: bool


class SceneOperator:
    """Precomputed scattering blocks, grids and pair translations for a scene.

    The translation step sits behind ``apply_translation`` so a fast summation
    backend could replace the dense per-pair matrices without touching the
    solver.
    """

    def __init__(self, scene: Scene):
        self.scene = scene
        self.material = scene.material
        self.order_max = scene.order_max
        self.P = mode_count(scene.order_max)
        self.block_size = 3 * self.P
        self.size = self.block_size * scene.n_particles
        self.scattering: list[ScatteringMatrixBlocks] = []
        for p in scene.particles:
            if p.matrix_file is None:
                blocks = sphere_scattering_blocks(p.radius, scene.material, scene.order_max)
            else:
                blocks = load_scattering_blocks(p.matrix_file)
                if blocks.order_max < scene.order_max:
                    raise SceneError(
                        f"scattering file {p.matrix_file} has order {blocks.order_max} "
                        f"< scene truncation {scene.order_max}")
                if blocks.order_max > scene.order_max:
                    sel = slice(0, self.P)
                    blocks = ScatteringMatrixBlocks(
                        scene.order_max, blocks.kappa_p, blocks.kappa_s, blocks.radius,
                        blocks.provenance, blocks.blocks[sel])
            self.scattering.append(blocks)
        self.grids = [sphere_grid_for_order(scene.order_max, p.center, p.radius)
                      for p in scene.particles]
        self.projectors = [SphereProjector(g, scene.material, scene.order_max, "regular")
                           for g in self.grids]
        self._pair: dict[tuple[int, int], np.ndarray] = {}
        for l in range(scene.n_particles):
            for j in range(scene.n_particles):
                if l != j:
                    self._pair[(l, j)] = translation_matrix(
                        scene.material, scene.order_max, scene.particles[j].center,
                        self.grids[l], self.projectors[l])

    # -- operator pieces ---------------------------------------------------
    def apply_scattering(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        B = self.block_size
        for l, blocks in enumerate(self.scattering):
            out[l * B:(l + 1) * B] = blocks.apply_flat(x[l * B:(l + 1) * B])
        return out

    def apply_inverse_scattering(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        B = self.block_size
        for l, blocks in enumerate(self.scattering):
            out[l * B:(l + 1) * B] = blocks.inverse_apply_flat(x[l * B:(l + 1) * B])
        return out

    def apply_translation(self, x: np.ndarray) -> np.ndarray:
        """Incoming coefficients on every particle induced by all others."""
        B = self.block_size
        out = np.zeros_like(x)
        for (l, j), T in self._pair.items():
            out[l * B:(l + 1) * B] += T @ x[j * B:(j + 1) * B]
        return out

    def apply_system(self, x: np.ndarray) -> np.ndarray:
        """(I - S T) x, the preconditioned second-kind form."""
        return x - self.apply_scattering(self.apply_translation(x))

    def apply_plain_system(self, x: np.ndarray) -> np.ndarray:
        """S^{-1} x - T x, the unpreconditioned form (comparison tests only)."""
        return self.apply_inverse_scattering(x) - self.apply_translation(x)

    def dense_system(self) -> np.ndarray:
        """Materialized (I - S T); used by the batched multi-rhs solves."""
        B, M = self.block_size, self.scene.n_particles
        A = np.eye(self.size, dtype=complex)
        for (l, j), T in self._pair.items():
            ST = np.einsum("pij,pjK->piK", self.scattering[l].blocks,
                           T.reshape(self.P, 3, B)).reshape(B, B)
            A[l * B:(l + 1) * B, j * B:(j + 1) * B] -= ST
        return A

    # -- incident expansions -----------------------------------------------
    def incident_coefficients(self, incident) -> np.ndarray:
        """Stacked local incoming expansions of the incident field.

        Plane waves expand analytically (per-channel phase shifts); Herglotz
        kernels expand by direction-grid quadrature.
        """
        rhs = np.empty(self.size, dtype=complex)
        B = self.block_size
        if isinstance(incident, PlaneWaveSpec):
            base = plane_wave_coeffs(incident, self.material, self.order_max)
            d = incident.direction
            for l, p in enumerate(self.scene.particles):
                ph_s = np.exp(1j * self.material.kappa_s * d @ p.center)
                ph_p = np.exp(1j * self.material.kappa_p * d @ p.center)
                data = base.data * np.array([ph_s, ph_s, ph_p])[None, :]
                rhs[l * B:(l + 1) * B] = data.reshape(-1)
        elif isinstance(incident, HerglotzKernel):
            tables = DirectionTables(incident.grid)
            for l, p in enumerate(self.scene.particles):
                cf = herglotz_incoming_coeffs(incident, self.material, self.order_max,
                                              p.center, tables)
                rhs[l * B:(l + 1) * B] = cf.flat()
        else:
            raise TypeError(f"unsupported incident field {type(incident).__name__}")
        return rhs

    def eval_incident(self, incident, points: np.ndarray) -> np.ndarray:
        if isinstance(incident, PlaneWaveSpec):
            return incident.evaluate(self.material, points)
        if isinstance(incident, HerglotzKernel):
            return herglotz_eval(incident, self.material, points)
        raise TypeError(f"unsupported incident field {type(incident).__name__}")

    def split_outgoing(self, x: np.ndarray) -> list[CoefficientVector]:
        B = self.block_size
        return [CoefficientVector.from_flat(self.order_max, "outgoing", x[l * B:(l + 1) * B])
                for l in range(self.scene.n_particles)]


def _gmres_solve(apply_fn, b: np.ndarray, tol: float, restart: int, maxiter: int):
    """Restarted GMRES with inner-iteration counting."""
    n = b.size
    residuals: list[float] = []

    op = LinearOperator((n, n), matvec=apply_fn, dtype=complex)
    cb = residuals.append
    x, info = gmres(op, b, rtol=tol, atol=0.0, restart=restart,
                    maxiter=max(1, int(np.ceil(maxiter / restart))),
                    callback=cb, callback_type="pr_norm")
    # pr_norm reports the preconditioned residual per inner iteration
    iterations = len(residuals)
    bnorm = np.linalg.norm(b)
    final = float(np.linalg.norm(b - apply_fn(x)) / bnorm) if bnorm > 0 else 0.0
    return x, info, iterations, final, residuals


def solve_forward(scene: Scene, incident, tol: float = 1e-6, restart: int = 50,
                  maxiter: int = 500, operator: SceneOperator | None = None,
                  preconditioned: bool = True, n_boundary_samples: int = 200,
                  seed: int = 0) -> SolveReport:
    """Solve the coupled multiple-scattering system for one incident field.

    Reports inner GMRES iterations, the final relative residual, and the
    rigid-boundary residual max|u| / max|u_inc| sampled at random surface
    points of every particle.
    """
    op = operator or SceneOperator(scene)
    rhs_in = op.incident_coefficients(incident)
    if preconditioned:
        b = op.apply_scattering(rhs_in)
        x, info, iters, final, residuals = _gmres_solve(op.apply_system, b, tol, restart, maxiter)
    else:
        b = rhs_in
        x, info, iters, final, residuals = _gmres_solve(op.apply_plain_system, b, tol, restart, maxiter)
    if info != 0 or final > tol * 10:
        raise SolveError(
            f"GMRES did not reach tol={tol} within {maxiter} iterations "
            f"(info={info}, final residual {final:.3e})", residuals)
    outgoing = op.split_outgoing(x)
    bres = boundary_residual(scene, outgoing, incident, operator=op,
                             n_samples=n_boundary_samples, seed=seed)
    return SolveReport(outgoing, iters, final, bres, info == 0)


def eval_total_field(scene: Scene, outgoing: list[CoefficientVector], incident,
                     points, operator: SceneOperator | None = None,
                     allow_surface: bool = True) -> np.ndarray:
    """Incident plus all scattered expansions, outside the enclosing spheres."""
    op = operator or SceneOperator(scene)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tol = -1e-12 if allow_surface else 0.0
    for p in scene.particles:
        r = np.linalg.norm(pts - p.center[None, :], axis=1)
        if np.any(r < p.radius * (1.0 + tol) - 1e-14):
            raise SceneError("total field evaluation point inside an enclosing sphere")
    total = op.eval_incident(incident, pts) if incident is not None else np.zeros((pts.shape[0], 3), complex)
    for cf, p in zip(outgoing, scene.particles):
        u_s, u_p = eval_expansion(cf, scene.material, p.center, pts)
        total = total + u_s + u_p
    return total[0] if np.asarray(points).ndim == 1 else total


def boundary_residual(scene: Scene, outgoing: list[CoefficientVector], incident,
                      operator: SceneOperator | None = None, n_samples: int = 200,
                      seed: int = 0) -> float:
    """max |u_total| / max |u_incident| over random surface points."""
    rng = np.random.default_rng(seed)
    op = operator or SceneOperator(scene)
    worst_u = 0.0
    worst_inc = 0.0
    for p in scene.particles:
        d = rng.normal(size=(n_samples, 3))
        d /= np.linalg.norm(d, axis=1)[:, None]
        pts = p.center[None, :] + p.radius * d
        total = eval_total_field(scene, outgoing, incident, pts, operator=op)
        worst_u = max(worst_u, float(np.abs(total).max()))
        worst_inc = max(worst_inc, float(np.abs(op.eval_incident(incident, pts)).max()))
    return worst_u / worst_inc if worst_inc > 0 else worst_u
