"""Special functions for vector spherical wave expansions.

Spherical Bessel / Hankel radial tables with first derivatives, orthonormal
spherical harmonics in the self-conjugate normalization

    Y_n^m(theta, phi) = (-1)^{|m|} Pbar_n^{|m|}(cos theta) e^{i m phi},
    Y_n^{-m} = conj(Y_n^m),

and pole-safe surface gradients.  Everything is vectorized over evaluation
points; the scalar entry points wrap the table builders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import spherical_jn, spherical_yn

__all__ = [
    "ModeIndex",
    "RadialTable",
    "mode_count",
    "mode_linear_index",
    "mode_arrays",
    "radial_table",
    "legendre_tables",
    "AngularTable",
    "spherical_harmonic",
    "surface_gradient_Y",
]


@dataclass(frozen=True)
class ModeIndex:
    """Degree/order pair (n, m) with |m| <= n."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"degree must be nonnegative, got n={self.n}")
        if abs(self.m) > self.n:
            raise ValueError(f"order |m| <= n required, got (n, m)=({self.n}, {self.m})")

    @property
    def linear(self) -> int:
        """Linear index n^2 + n + m, a bijection onto 0..(N+1)^2-1 for n <= N."""
        return self.n * self.n + self.n + self.m


def mode_count(order_max: int) -> int:
    """Number of scalar modes with n <= order_max."""
    return (order_max + 1) ** 2


def mode_linear_index(n, m):
    return n * n + n + m


def mode_arrays(order_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Degree and order of every mode in linear-index order."""
    n_of = np.concatenate([np.full(2 * n + 1, n) for n in range(order_max + 1)])
    m_of = np.concatenate([np.arange(-n, n + 1) for n in range(order_max + 1)])
    return n_of, m_of


@dataclass(frozen=True)
class RadialTable:
    """j_n or h_n^{(1)} with derivatives for n = 0..order_max at one argument."""

    kind: str                 # "regular_j" | "outgoing_h"
    order_max: int
    argument: float
    values: np.ndarray        # shape (order_max+1,), complex
    derivatives: np.ndarray   # d/dx, same shape


def _check_radial_arg(x: float) -> float:
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"radial argument must be finite, got {x!r}")
    if x <= 0.0:
        raise ValueError(f"radial argument must be positive, got {x!r}")
    return x


def radial_table(kind: str, order_max: int, x: float) -> RadialTable:
    """Tabulate j_n(x) or h_n^{(1)}(x) and derivatives for n = 0..order_max.

    The regular and outgoing families satisfy the Wronskian identity
    j_n(x) h_n'(x) - j_n'(x) h_n(x) = i / x^2, which is what the tests pin.
    """
    x = _check_radial_arg(x)
    if order_max < 0:
        raise ValueError(f"order_max must be >= 0, got {order_max}")
    n = np.arange(order_max + 1)
    if kind == "regular_j":
        vals = spherical_jn(n, x).astype(complex)
        ders = spherical_jn(n, x, derivative=True).astype(complex)
    elif kind == "outgoing_h":
        vals = spherical_jn(n, x) + 1j * spherical_yn(n, x)
        ders = spherical_jn(n, x, derivative=True) + 1j * spherical_yn(n, x, derivative=True)
    else:
        raise ValueError(f"kind must be 'regular_j' or 'outgoing_h', got {kind!r}")
    return RadialTable(kind, order_max, x, vals, ders)


def _tri_index(n: int, m: int) -> int:
    # triangular layout over m >= 0: (n, m) -> n(n+1)/2 + m
    return n * (n + 1) // 2 + m


def legendre_tables(order_max: int, theta: np.ndarray):
    """Normalized associated Legendre tables, pole-safe.

    Returns (P, Q, A) with triangular mode layout over m >= 0:

    * ``P[t]`` = Pbar_n^m(cos theta), normalized so that
      int_0^pi Pbar^2 sin(theta) dtheta = 1/(2 pi)  (orthonormal Y).
    * ``Q[t]`` = Pbar_n^m / sin(theta) for m >= 1 (finite at the poles),
      zeros for m = 0.
    * ``A[t]`` = d Pbar_n^m / d theta.

    No Condon-Shortley phase is included here; the (-1)^{|m|} factor of the
    harmonics is applied by the callers.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    ct, st = np.cos(theta), np.sin(theta)
    N = order_max
    ntri = (N + 1) * (N + 2) // 2
    P = np.zeros((ntri, theta.size))
    Q = np.zeros((ntri, theta.size))
    A = np.zeros((ntri, theta.size))

    P[0] = 1.0 / np.sqrt(4.0 * np.pi)
    # diagonal terms Pbar_m^m and the sin-scaled Qbar_m^m = Pbar_m^m / sin
    for m in range(1, N + 1):
        f = np.sqrt((2 * m + 1) / (2.0 * m))
        P[_tri_index(m, m)] = f * st * P[_tri_index(m - 1, m - 1)]
        if m == 1:
            Q[_tri_index(1, 1)] = f * P[0]
        else:
            Q[_tri_index(m, m)] = f * st * Q[_tri_index(m - 1, m - 1)]
    # off-diagonal upward recurrence in n at fixed m
    for m in range(0, N + 1):
        if m + 1 <= N:
            f = np.sqrt(2 * m + 3.0)
            P[_tri_index(m + 1, m)] = f * ct * P[_tri_index(m, m)]
            if m >= 1:
                Q[_tri_index(m + 1, m)] = f * ct * Q[_tri_index(m, m)]
        for n in range(m + 2, N + 1):
            a = np.sqrt((4.0 * n * n - 1.0) / (n * n - m * m))
            b = np.sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1.0) ** 2 - 1.0))
            P[_tri_index(n, m)] = a * (ct * P[_tri_index(n - 1, m)] - b * P[_tri_index(n - 2, m)])
            if m >= 1:
                Q[_tri_index(n, m)] = a * (ct * Q[_tri_index(n - 1, m)] - b * Q[_tri_index(n - 2, m)])

    # theta-derivatives: for m >= 1 via the sin-scaled table, for m = 0 via
    # A_n^0 = -sqrt(n(n+1)) Pbar_n^1 (both forms finite at the poles)
    for n in range(1, N + 1):
        A[_tri_index(n, 0)] = -np.sqrt(n * (n + 1.0)) * P[_tri_index(n, 1)]
        for m in range(1, n + 1):
            e = np.sqrt((n * n - m * m) * (2.0 * n + 1.0) / (2.0 * n - 1.0))
            qprev = Q[_tri_index(n - 1, m)] if m <= n - 1 else 0.0
            A[_tri_index(n, m)] = n * ct * Q[_tri_index(n, m)] - e * qprev
    return P, Q, A


class AngularTable:
    """Spherical harmonics and surface-gradient components at a point set.

    Attributes are complex arrays of shape (mode_count(order_max), npts) in
    linear mode order:

    * ``Y``      : Y_n^m
    * ``dtheta`` : d/dtheta Y_n^m   (theta-hat component of Grad Y)
    * ``dphi_over_sin`` : (1/sin theta) d/dphi Y_n^m  (phi-hat component)

    Both gradient components are evaluated through pole-safe recurrences and
    are finite everywhere, including theta = 0 and pi.
    """

    def __init__(self, order_max: int, theta, phi):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        if theta.shape != phi.shape:
            raise ValueError("theta and phi must have matching shapes")
        self.order_max = order_max
        self.theta = theta
        self.phi = phi
        P, Q, A = legendre_tables(order_max, theta)
        nmodes = mode_count(order_max)
        npts = theta.size
        self.Y = np.empty((nmodes, npts), dtype=complex)
        self.dtheta = np.empty((nmodes, npts), dtype=complex)
        self.dphi_over_sin = np.empty((nmodes, npts), dtype=complex)
        n_of, m_of = mode_arrays(order_max)
        # cache e^{i m phi} for m = 0..N
        eim = np.empty((order_max + 1, npts), dtype=complex)
        eim[0] = 1.0
        if order_max >= 1:
            e1 = np.exp(1j * phi)
            for m in range(1, order_max + 1):
                eim[m] = eim[m - 1] * e1
        for p in range(nmodes):
            n, m = int(n_of[p]), int(m_of[p])
            am = abs(m)
            t = _tri_index(n, am)
            sgn = -1.0 if am % 2 else 1.0
            phase = eim[am] if m >= 0 else np.conj(eim[am])
            self.Y[p] = sgn * P[t] * phase
            self.dtheta[p] = sgn * A[t] * phase
            self.dphi_over_sin[p] = sgn * (1j * m) * Q[t] * phase


def spherical_harmonic(mode: ModeIndex, theta: float, phi: float) -> complex:
    """Y_n^m at a single direction, self-conjugate normalization."""
    tab = AngularTable(mode.n, np.array([theta]), np.array([phi]))
    return complex(tab.Y[mode.linear, 0])


def surface_gradient_Y(mode: ModeIndex, theta: float, phi: float) -> np.ndarray:
    """(theta-hat, phi-hat) components of Grad Y_n^m; finite at the poles."""
    tab = AngularTable(mode.n, np.array([theta]), np.array([phi]))
    p = mode.linear
    return np.array([tab.dtheta[p, 0], tab.dphi_over_sin[p, 0]])
