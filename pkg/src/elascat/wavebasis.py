"""Vector spherical wave fields, plane-wave and Herglotz expansions, far fields.

Three field families about a center, for a scalar mode u = f_n(kappa r) Y_n^m
with f_n = j_n (regular) or h_n^(1) (outgoing):

* ``curlcurl``: curl curl (x u) / (i kappa_s)   -- shear, coefficient a/alpha
* ``curl``:     curl (x u)                      -- shear, coefficient b/beta
* ``grad``:     grad u                          -- compressional, c/gamma

On a sphere of radius r the families decompose in the tangent basis
(Grad Y, x-hat cross Grad Y, Y x-hat) as

    curlcurl: (f + z f')/(i z) Grad Y + n(n+1) f/(i z) Y x-hat,   z = kappa_s r
    curl:     -f x-hat cross Grad Y
    grad:     kappa_p f' Y x-hat + (f / r) Grad Y

which is the single source of truth used by evaluators, projections and the
mode-matched sphere blocks.  The shear/compressional split is tracked
structurally: curlcurl and curl are shear (kappa_s), grad is compressional
(kappa_p).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .quadrature import DirectionGrid, frames
from .specfun import AngularTable, ModeIndex, mode_arrays, mode_count

__all__ = [
    "Material",
    "CoefficientVector",
    "PlaneWaveSpec",
    "HerglotzKernel",
    "eval_wave_field",
    "eval_expansion",
    "plane_wave_coeffs",
    "herglotz_eval",
    "herglotz_incoming_coeffs",
    "far_field_from_outgoing",
    "far_field_matrix",
    "fundamental_solution",
    "DirectionTables",
]

_FAMILIES = ("curlcurl", "curl", "grad")
_KINDS = ("regular", "outgoing")

# floor for |x - center| when evaluating regular fields at the center: the
# field is analytic there and the O((kappa r)^2) slip is below roundoff
_REGULAR_RADIUS_FLOOR = 1e-9


@dataclass(frozen=True)
class Material:
    """Homogeneous isotropic elastic medium, unit density.

    kappa_p = omega / sqrt(lambda + 2 mu), kappa_s = omega / sqrt(mu); the
    constraints mu > 0 and lambda + mu > 0 force kappa_p < kappa_s.
    """

    omega: float
    lam: float
    mu: float

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.lam + self.mu <= 0:
            raise ValueError(f"lambda + mu must be positive, got {self.lam + self.mu}")

    @classmethod
    def from_wavenumbers(cls, kappa_p: float, kappa_s: float, omega: float = 1.0) -> "Material":
        """Lame constants from the two wavenumbers; omega defaults to 1."""
        if not (0 < kappa_p < kappa_s):
            raise ValueError(f"need 0 < kappa_p < kappa_s, got {kappa_p}, {kappa_s}")
        mu = (omega / kappa_s) ** 2
        lam = (omega / kappa_p) ** 2 - 2.0 * mu
        return cls(omega=omega, lam=lam, mu=mu)

    @property
    def kappa_p(self) -> float:
        return self.omega / np.sqrt(self.lam + 2.0 * self.mu)

    @property
    def kappa_s(self) -> float:
        return self.omega / np.sqrt(self.mu)


@dataclass
class CoefficientVector:
    """Stacked modal coefficients, shape (mode_count, 3).

    Channel order is (a, b, c) for incoming and (alpha, beta, gamma) for
    outgoing vectors; the n = 0 shear channels are identically zero.
    """

    order_max: int
    kind: str
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in ("incoming", "outgoing"):
            raise ValueError(f"kind must be 'incoming' or 'outgoing', got {self.kind!r}")
        expected = (mode_count(self.order_max), 3)
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != {expected}")
        self.data = np.ascontiguousarray(self.data, dtype=complex)
        self.data[0, 0] = 0.0
        self.data[0, 1] = 0.0

    @classmethod
    def zeros(cls, order_max: int, kind: str) -> "CoefficientVector":
        return cls(order_max, kind, np.zeros((mode_count(order_max), 3), dtype=complex))

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    @classmethod
    def from_flat(cls, order_max: int, kind: str, vec: np.ndarray) -> "CoefficientVector":
        return cls(order_max, kind, np.array(vec, dtype=complex).reshape(mode_count(order_max), 3))


@dataclass(frozen=True)
class PlaneWaveSpec:
    """Elastic plane wave: direction d (unit), real polarization p.

    The shear part carries amplitude (d x p) x d / mu, the compressional part
    (d . p) d / (lambda + 2 mu).
    """

    direction: np.ndarray
    polarization: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        p = np.asarray(self.polarization, dtype=float)
        if d.shape != (3,) or p.shape != (3,):
            raise ValueError("direction and polarization must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError(f"propagation direction must be a unit vector, |d| = {np.linalg.norm(d)}")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "polarization", p)

    def evaluate(self, material: Material, points: np.ndarray) -> np.ndarray:
        """Direct evaluation at points, shape (npts, 3)."""
        pts = np.atleast_2d(points)
        d, p = self.direction, self.polarization
        amp_s = np.cross(np.cross(d, p), d) / material.mu
        amp_c = (d @ p) / (material.lam + 2.0 * material.mu)
        ph_s = np.exp(1j * material.kappa_s * pts @ d)
        ph_p = np.exp(1j * material.kappa_p * pts @ d)
        return ph_s[:, None] * amp_s[None, :] + ph_p[:, None] * (amp_c * d)[None, :]


# ---------------------------------------------------------------------------
# radial weights and dense basis matrices
# ---------------------------------------------------------------------------

def _radial_fn(kind: str, nmax: int, z: np.ndarray):
    """f_n(z) and f_n'(z) for n = 0..nmax over a flat argument array."""
    n = np.arange(nmax + 1)[:, None]
    z = np.atleast_1d(z)[None, :]
    if kind == "regular":
        f = spherical_jn(n, z).astype(complex)
        fp = spherical_jn(n, z, derivative=True).astype(complex)
    else:
        f = spherical_jn(n, z) + 1j * spherical_yn(n, z)
        fp = spherical_jn(n, z, derivative=True) + 1j * spherical_yn(n, z, derivative=True)
    return f, fp


def _spherical_about(center: np.ndarray, points: np.ndarray, kind: str):
    rel = np.atleast_2d(points) - np.asarray(center, dtype=float)[None, :]
    r = np.linalg.norm(rel, axis=1)
    if kind == "outgoing" and np.any(r == 0.0):
        raise ValueError("outgoing wave field is singular at the expansion center")
    r_safe = np.maximum(r, _REGULAR_RADIUS_FLOOR)
    with np.errstate(invalid="ignore"):
        theta = np.arccos(np.clip(rel[:, 2] / r_safe, -1.0, 1.0))
    phi = np.arctan2(rel[:, 1], rel[:, 0])
    theta = np.where(r == 0.0, 0.0, theta)
    phi = np.where(r == 0.0, 0.0, phi)
    return r_safe, theta, phi


def basis_matrices(material: Material, order_max: int, kind: str,
                   center: np.ndarray, points: np.ndarray,
                   table: AngularTable | None = None):
    """Dense evaluation matrices for a wave expansion about ``center``.

    Returns (E_shear, E_comp) with shapes (npts, 3, P, 2) and (npts, 3, P):
    contracting E_shear with the (a, b) channels and E_comp with c gives the
    shear and compressional field parts at each point.
    """
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")
    r, theta, phi = _spherical_about(center, points, kind)
    if table is None:
        table = AngularTable(order_max, theta, phi)
    ks, kp = material.kappa_s, material.kappa_p
    P = mode_count(order_max)
    n_of, _ = mode_arrays(order_max)
    npts = r.size

    f_s, fp_s = _radial_fn(kind, order_max, ks * r)      # (N+1, npts)
    f_p, fp_p = _radial_fn(kind, order_max, kp * r)
    zs = ks * r[None, :]
    nn = (np.arange(order_max + 1) * (np.arange(order_max + 1) + 1.0))[:, None]
    w_cc_tan = (f_s + zs * fp_s) / (1j * zs)
    w_cc_rad = nn * f_s / (1j * zs)
    w_curl = -f_s
    w_gr_rad = kp * fp_p
    w_gr_tan = f_p / r[None, :]

    rhat, that, phat = frames(theta, phi)
    gradY = table.dtheta[:, :, None] * that[None] + table.dphi_over_sin[:, :, None] * phat[None]
    crossY = table.dtheta[:, :, None] * phat[None] - table.dphi_over_sin[:, :, None] * that[None]
    radY = table.Y[:, :, None] * rhat[None]               # (P, npts, 3)

    idx = n_of  # per-mode radial row
    E_shear = np.empty((npts, 3, P, 2), dtype=complex)
    E_shear[:, :, :, 0] = np.transpose(w_cc_tan[idx, :, None] * gradY
                                       + w_cc_rad[idx, :, None] * radY, (1, 2, 0))
    E_shear[:, :, :, 1] = np.transpose(w_curl[idx, :, None] * crossY, (1, 2, 0))
    E_comp = np.transpose(w_gr_rad[idx, :, None] * radY + w_gr_tan[idx, :, None] * gradY, (1, 2, 0))
    return E_shear, E_comp


def eval_expansion(coeffs: CoefficientVector, material: Material, center,
                   points: np.ndarray, chunk: int = 2048):
    """Shear and compressional parts of an expansion at arbitrary points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    u_s = np.empty((pts.shape[0], 3), dtype=complex)
    u_p = np.empty_like(u_s)
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        E_s, E_c = basis_matrices(material, coeffs.order_max, coeffs_kind(coeffs), center, pts[lo:hi])
        u_s[lo:hi] = np.einsum("xcpk,pk->xc", E_s, coeffs.data[:, :2])
        u_p[lo:hi] = np.einsum("xcp,p->xc", E_c, coeffs.data[:, 2])
    return u_s, u_p


def coeffs_kind(coeffs: CoefficientVector) -> str:
    return "regular" if coeffs.kind == "incoming" else "outgoing"


def eval_wave_field(family: str, kind: str, mode: ModeIndex, kappa: float,
                    center, x) -> np.ndarray:
    """Single basis field at one point; ``kappa`` is kappa_s for the shear
    families and kappa_p for the grad family."""
    if family not in _FAMILIES:
        raise ValueError(f"family must be one of {_FAMILIES}, got {family!r}")
    if kind not in _KINDS:
        raise ValueError(f"kind must be 'regular' or 'outgoing', got {kind!r}")
    center = np.asarray(center, dtype=float)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    r, theta, phi = _spherical_about(center, pts, kind)
    table = AngularTable(mode.n, theta, phi)
    p = mode.linear
    f, fp = _radial_fn(kind, mode.n, kappa * r)
    f, fp = f[mode.n], fp[mode.n]
    rhat, that, phat = frames(theta, phi)
    gradY = table.dtheta[p, :, None] * that + table.dphi_over_sin[p, :, None] * phat
    crossY = table.dtheta[p, :, None] * phat - table.dphi_over_sin[p, :, None] * that
    radY = table.Y[p, :, None] * rhat
    z = kappa * r
    if family == "curlcurl":
        out = ((f + z * fp) / (1j * z))[:, None] * gradY \
            + (mode.n * (mode.n + 1) * f / (1j * z))[:, None] * radY
    elif family == "curl":
        out = -f[:, None] * crossY
    else:
        out = (kappa * fp)[:, None] * radY + (f / r)[:, None] * gradY
    return out[0] if np.asarray(x).ndim == 1 else out


# ---------------------------------------------------------------------------
# plane waves
# ---------------------------------------------------------------------------

def plane_wave_coeffs(spec: PlaneWaveSpec, material: Material, order_max: int) -> CoefficientVector:
    """Regular-expansion coefficients of an elastic plane wave about the origin.

    The tangential (shear) channels project the full polarization onto
    Grad Y and d x Grad Y at the propagation direction; the b channel sign
    is fixed by round-trip against the surface projections.
    """
    d = spec.direction
    theta = np.array([np.arccos(np.clip(d[2], -1, 1))])
    phi = np.array([np.arctan2(d[1], d[0])])
    table = AngularTable(order_max, theta, phi)
    _, that, phat = frames(theta, phi)
    n_of, _ = mode_arrays(order_max)
    P = mode_count(order_max)

    amp_s = np.cross(np.cross(d, spec.polarization), d) / material.mu
    amp_c = (d @ spec.polarization) / (material.lam + 2.0 * material.mu)

    gradY = table.dtheta[:, 0, None] * that[0] + table.dphi_over_sin[:, 0, None] * phat[0]
    crossY = table.dtheta[:, 0, None] * phat[0] - table.dphi_over_sin[:, 0, None] * that[0]
    data = np.zeros((P, 3), dtype=complex)
    nn = n_of * (n_of + 1.0)
    pref = 4.0 * np.pi * 1j ** n_of
    with np.errstate(invalid="ignore", divide="ignore"):
        data[:, 0] = np.where(n_of > 0, pref / np.where(nn > 0, nn, 1.0)
                              * (np.conj(gradY) @ amp_s), 0.0)
        data[:, 1] = np.where(n_of > 0, -pref / np.where(nn > 0, nn, 1.0)
                              * (np.conj(crossY) @ amp_s), 0.0)
    data[:, 2] = -4.0 * np.pi * 1j ** (n_of + 1) / material.kappa_p * np.conj(table.Y[:, 0]) * amp_c
    return CoefficientVector(order_max, "incoming", data)


# ---------------------------------------------------------------------------
# Herglotz waves
# ---------------------------------------------------------------------------

class DirectionTables:
    """Angular tables and channel frames on a direction grid, cached per order."""

    def __init__(self, grid: DirectionGrid):
        self.grid = grid
        self._tables: dict[int, AngularTable] = {}

    def angular(self, order_max: int) -> AngularTable:
        tab = self._tables.get(order_max)
        if tab is None or tab.order_max < order_max:
            tab = AngularTable(order_max, self.grid.theta, self.grid.phi)
            self._tables[order_max] = tab
        return tab


@dataclass
class HerglotzKernel:
    """Superposition weights over a direction grid.

    ``values[q] = (f_p, f_s_theta, f_s_phi)``: longitudinal amplitude along
    alpha_q and transversal amplitudes along the grid frame.  The structural
    split enforces f_p x alpha = 0 and f_s . alpha = 0 exactly.
    """

    grid: DirectionGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (self.grid.n_directions, 3)
        if self.values.shape != expected:
            raise ValueError(f"kernel values shape {self.values.shape} != {expected}")
        self.values = np.ascontiguousarray(self.values, dtype=complex)

    @classmethod
    def zeros(cls, grid: DirectionGrid) -> "HerglotzKernel":
        return cls(grid, np.zeros((grid.n_directions, 3), dtype=complex))

    @classmethod
    def from_flat(cls, grid: DirectionGrid, vec: np.ndarray) -> "HerglotzKernel":
        return cls(grid, np.array(vec, dtype=complex).reshape(grid.n_directions, 3))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def longitudinal_vectors(self) -> np.ndarray:
        return self.values[:, 0, None] * self.grid.alpha

    def transversal_vectors(self) -> np.ndarray:
        return (self.values[:, 1, None] * self.grid.theta_hat
                + self.values[:, 2, None] * self.grid.phi_hat)


def herglotz_eval(kernel: HerglotzKernel, material: Material, points, chunk: int = 8192) -> np.ndarray:
    """Quadrature evaluation of the Herglotz superposition at points (npts, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = kernel.grid
    fp_vec = kernel.longitudinal_vectors() * g.weights[:, None]
    fs_vec = kernel.transversal_vectors() * g.weights[:, None]
    out = np.empty((pts.shape[0], 3), dtype=complex)
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        dots = pts[lo:hi] @ g.alpha.T                      # (chunk, Q)
        out[lo:hi] = (np.exp(1j * material.kappa_p * dots) @ fp_vec
                      + np.exp(1j * material.kappa_s * dots) @ fs_vec)
    return out[0] if np.asarray(points).ndim == 1 else out


def _plane_wave_tables(material: Material, order_max: int, tables: DirectionTables):
    """Per-direction regular-expansion coefficients of unit plane waves.

    Returns (Ap, As) with shapes (P, 3, Q) and (P, 3, Q, 2): coefficients of
    a unit longitudinal wave (polarization alpha) and of unit transversal
    waves polarized along theta-hat / phi-hat.
    """
    g = tables.grid
    tab = tables.angular(order_max)
    n_of, _ = mode_arrays(order_max)
    P, Q = mode_count(order_max), g.n_directions
    nn = np.where(n_of > 0, n_of * (n_of + 1.0), 1.0)
    pref = (4.0 * np.pi * 1j ** n_of / nn) * (n_of > 0)

    # tangential basis vectors at each direction
    that, phat = g.theta_hat, g.phi_hat
    gradY = tab.dtheta[:, :, None] * that[None] + tab.dphi_over_sin[:, :, None] * phat[None]
    crossY = tab.dtheta[:, :, None] * phat[None] - tab.dphi_over_sin[:, :, None] * that[None]

    As = np.zeros((P, 3, Q, 2), dtype=complex)
    for k, pol in enumerate((that, phat)):
        dot_g = np.einsum("pqc,qc->pq", np.conj(gradY), pol)
        dot_x = np.einsum("pqc,qc->pq", np.conj(crossY), pol)
        As[:, 0, :, k] = pref[:, None] * dot_g
        As[:, 1, :, k] = -pref[:, None] * dot_x
    Ap = np.zeros((P, 3, Q), dtype=complex)
    Ap[:, 2, :] = (-4.0 * np.pi * 1j ** (n_of + 1) / material.kappa_p)[:, None] * np.conj(tab.Y)
    return Ap, As


def herglotz_incoming_coeffs(kernel: HerglotzKernel, material: Material, order_max: int,
                             center, tables: DirectionTables | None = None) -> CoefficientVector:
    """Local regular expansion of a Herglotz wave about ``center`` by quadrature."""
    g = kernel.grid
    tables = tables or DirectionTables(g)
    Ap, As = _plane_wave_tables(material, order_max, tables)
    center = np.asarray(center, dtype=float)
    ph_p = np.exp(1j * material.kappa_p * g.alpha @ center) * g.weights
    ph_s = np.exp(1j * material.kappa_s * g.alpha @ center) * g.weights
    data = np.einsum("pcq,q->pc", Ap, ph_p * kernel.values[:, 0])
    data += np.einsum("pcqk,qk->pc", As, ph_s[:, None] * kernel.values[:, 1:])
    return CoefficientVector(order_max, "incoming", data)


# ---------------------------------------------------------------------------
# far fields
# ---------------------------------------------------------------------------

def far_field_matrix(material: Material, order_max: int, centers, tables: DirectionTables) -> np.ndarray:
    """Map stacked outgoing coefficients to far-field samples.

    Rows are interleaved (direction, channel) with channels (p, s_theta,
    s_phi); columns run over particles and their flattened (P, 3)
    coefficients.  Per-particle phase factors e^{-i kappa x-hat . s_l} are
    included.
    """
    g = tables.grid
    tab = tables.angular(order_max)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    M = centers.shape[0]
    P, Q = mode_count(order_max), g.n_directions
    n_of, _ = mode_arrays(order_max)
    ks = material.kappa_s

    pre_s = (-1j) ** (n_of + 1) / ks
    pre_p = (-1j) ** n_of
    G = np.zeros((3 * Q, 3 * P * M), dtype=complex)
    rows = np.arange(Q)
    for l in range(M):
        ph_p = np.exp(-1j * material.kappa_p * g.alpha @ centers[l])
        ph_s = np.exp(-1j * ks * g.alpha @ centers[l])
        base = 3 * P * l
        cols = base + 3 * np.arange(P)
        # longitudinal: gamma -> Y, scalar along x-hat
        G[np.ix_(3 * rows, cols + 2)] = (pre_p[:, None] * tab.Y * ph_p[None, :]).T
        # transversal: alpha Grad Y - beta x-hat cross Grad Y
        G[np.ix_(3 * rows + 1, cols + 0)] = (pre_s[:, None] * tab.dtheta * ph_s[None, :]).T
        G[np.ix_(3 * rows + 1, cols + 1)] = (pre_s[:, None] * tab.dphi_over_sin * ph_s[None, :]).T
        G[np.ix_(3 * rows + 2, cols + 0)] = (pre_s[:, None] * tab.dphi_over_sin * ph_s[None, :]).T
        G[np.ix_(3 * rows + 2, cols + 1)] = (-pre_s[:, None] * tab.dtheta * ph_s[None, :]).T
    return G


def far_field_from_outgoing(coeffs, centers, material: Material, grid: DirectionGrid,
                            tables: DirectionTables | None = None):
    """Far-field pattern of a sum of outgoing expansions.

    Returns (v_p, v_s): the longitudinal scalar amplitude along x-hat and the
    transversal (theta-hat, phi-hat) components, per grid direction.
    """
    if isinstance(coeffs, CoefficientVector):
        coeffs = [coeffs]
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
    for c in coeffs:
        if c.kind != "outgoing":
            raise ValueError("far field requires outgoing coefficients")
    tables = tables or DirectionTables(grid)
    G = far_field_matrix(material, coeffs[0].order_max, centers, tables)
    x = np.concatenate([c.flat() for c in coeffs])
    v = (G @ x).reshape(-1, 3)
    return v[:, 0].copy(), v[:, 1:].copy()


# ---------------------------------------------------------------------------
# fundamental solution
# ---------------------------------------------------------------------------

def fundamental_solution(x, y, material: Material) -> np.ndarray:
    """Free-space displacement Green tensor of the time-harmonic medium.

    Symmetric 3x3; the double-gradient part is applied analytically.
    Singular at x = y.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    r = np.linalg.norm(d)
    if r == 0.0:
        raise ValueError("fundamental solution is singular at x = y")
    rhat = d / r
    w2 = material.omega**2

    def hess(kappa):
        gr = np.exp(1j * kappa * r) / r
        g1 = (1j * kappa - 1.0 / r) * gr
        g2 = ((1j * kappa - 1.0 / r) ** 2 + 1.0 / r**2) * gr
        return (g2 - g1 / r) * np.outer(rhat, rhat) + (g1 / r) * np.eye(3)

    ks, kp = material.kappa_s, material.kappa_p
    out = (ks**2 / (4.0 * np.pi * w2)) * (np.exp(1j * ks * r) / r) * np.eye(3)
    out = out + (hess(ks) - hess(kp)) / (4.0 * np.pi * w2)
    return out
