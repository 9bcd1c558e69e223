"""Scattering matrices of single particles and their small-radius asymptotics.

The rigid-sphere matrix comes from mode matching on the surface: the b
channel decouples, while (a, c) couple through a 2x2 system built from the
tangential and radial surface components of the wave families.  Matrices for
general shapes are loaded from ESMX files instead of being computed here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import gamma

import numpy as np

from .specfun import mode_arrays, mode_count, radial_table
from .wavebasis import CoefficientVector, Material

__all__ = [
    "ScatteringMatrixBlocks",
    "ResonanceError",
    "ScatteringFileError",
    "sphere_scattering_blocks",
    "small_sphere_eigenvalues",
    "far_field_blocks",
    "store_scattering_blocks",
    "load_scattering_blocks",
]

_RESONANCE_RTOL = 1e-12
ESMX_MAGIC = b"ESMX1"


class ResonanceError(RuntimeError):
    """A modal denominator fell below the resonance tolerance."""

    def __init__(self, n: int, channel: str, value: complex):
        super().__init__(
            f"near-resonant denominator for mode n={n}, channel {channel!r}: |{value:.3e}|"
        )
        self.n = n
        self.channel = channel


class ScatteringFileError(RuntimeError):
    """Malformed scattering-matrix file; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class ScatteringMatrixBlocks:
    """Per-mode 3x3 maps from incoming (a, b, c) to outgoing (alpha, beta, gamma).

    ``blocks`` has shape (mode_count, 3, 3) in linear mode order; the action
    on a coefficient vector is block diagonal and touches no cross-mode
    entries.
    """

    order_max: int
    kappa_p: float
    kappa_s: float
    radius: float
    provenance: str
    blocks: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (mode_count(self.order_max), 3, 3)
        if self.blocks.shape != expected:
            raise ValueError(f"blocks shape {self.blocks.shape} != {expected}")
        self.blocks = np.ascontiguousarray(self.blocks, dtype=complex)

    def apply(self, incoming: CoefficientVector) -> CoefficientVector:
        if incoming.kind != "incoming":
            raise ValueError("scattering blocks act on incoming coefficients")
        if incoming.order_max != self.order_max:
            raise ValueError(
                f"order mismatch: blocks have N={self.order_max}, coefficients N={incoming.order_max}"
            )
        out = np.einsum("pij,pj->pi", self.blocks, incoming.data)
        return CoefficientVector(self.order_max, "outgoing", out)

    def apply_flat(self, vec: np.ndarray) -> np.ndarray:
        return np.einsum("pij,pj->pi", self.blocks, vec.reshape(-1, 3)).reshape(-1)

    def inverse_apply_flat(self, vec: np.ndarray) -> np.ndarray:
        """Blockwise solve; used only by the unpreconditioned solver variant."""
        x = vec.reshape(-1, 3).copy()
        out = np.zeros_like(x)
        blocks = self.blocks
        out[0, 2] = x[0, 2] / blocks[0, 2, 2]
        if self.order_max >= 1:
            out[1:] = np.linalg.solve(blocks[1:], x[1:, :, None])[..., 0]
        return out.reshape(-1)


def _guard(value: complex, scale: float, n: int, channel: str) -> complex:
    if abs(value) < _RESONANCE_RTOL * max(scale, 1.0):
        raise ResonanceError(n, channel, value)
    return value


def sphere_scattering_blocks(radius: float, material: Material, order_max: int) -> ScatteringMatrixBlocks:
    """Mode-matched scattering matrix of a rigid sphere.

    The b channel is beta = -j_n(ks R)/h_n(ks R) b for n >= 1; the n = 0
    longitudinal mode is gamma = -j_0'(kp R)/h_0'(kp R) c; the (a, c) pair
    solves a 2x2 system whose rows are the tangential and radial surface
    components.  The 2x2 solve is a closed-form inversion with a conditioning
    guard.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    ks, kp = material.kappa_s, material.kappa_p
    xs, xp = ks * radius, kp * radius
    js = radial_table("regular_j", order_max, xs)
    hs = radial_table("outgoing_h", order_max, xs)
    jp = radial_table("regular_j", order_max, xp)
    hp = radial_table("outgoing_h", order_max, xp)

    P = mode_count(order_max)
    blocks = np.zeros((P, 3, 3), dtype=complex)
    n_of, _ = mode_arrays(order_max)

    g0 = _guard(hp.derivatives[0], abs(hp.values[0]), 0, "c")
    blocks[0, 2, 2] = -jp.derivatives[0] / g0

    for n in range(1, order_max + 1):
        hb = _guard(hs.values[n], abs(hs.values[n]) + abs(hs.derivatives[n]), n, "b")
        s_b = -js.values[n] / hb
        # 2x2 mode matching: rows (Grad Y, Y x-hat), columns (a/alpha, c/gamma)
        D = np.array([
            [(hs.values[n] + xs * hs.derivatives[n]) / (1j * xs), hp.values[n] / radius],
            [n * (n + 1) * hs.values[n] / (1j * xs),              kp * hp.derivatives[n]],
        ])
        E = np.array([
            [(js.values[n] + xs * js.derivatives[n]) / (1j * xs), jp.values[n] / radius],
            [n * (n + 1) * js.values[n] / (1j * xs),              kp * jp.derivatives[n]],
        ])
        det = D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
        _guard(det, float(np.max(np.abs(D))) ** 2, n, "ac")
        Dinv = np.array([[D[1, 1], -D[0, 1]], [-D[1, 0], D[0, 0]]]) / det
        AC = -Dinv @ E
        sel = n_of == n
        blocks[sel, 1, 1] = s_b
        blocks[sel, 0, 0] = AC[0, 0]
        blocks[sel, 0, 2] = AC[0, 1]
        blocks[sel, 2, 0] = AC[1, 0]
        blocks[sel, 2, 2] = AC[1, 1]
    return ScatteringMatrixBlocks(order_max, kp, ks, radius,
                                  f"analytic_sphere(R={radius})", blocks)


# ---------------------------------------------------------------------------
# far-field blocks and small-sphere eigenvalues
# ---------------------------------------------------------------------------

def far_field_blocks(scat: ScatteringMatrixBlocks, material: Material) -> np.ndarray:
    """Per-mode 3x3 far-field operator blocks D_out S D_in / omega.

    D_in converts kernel components on the (Grad Y, x-hat cross Grad Y,
    Y x-hat) basis to incoming coefficients, D_out converts outgoing
    coefficients back to far-field components on the same basis.
    """
    ks, kp, w = material.kappa_s, material.kappa_p, material.omega
    n_of, _ = mode_arrays(scat.order_max)
    d_in = np.stack([
        4.0 * np.pi * 1j ** n_of,
        -4.0 * np.pi * 1j ** n_of,
        -4.0 * np.pi * 1j ** (n_of + 1) / kp,
    ], axis=1)
    d_out = np.stack([
        (-1j) ** (n_of + 1) / ks,
        -((-1j) ** (n_of + 1)) / ks,
        (-1j) ** n_of,
    ], axis=1) / w
    return d_out[:, :, None] * scat.blocks * d_in[:, None, :]


def small_sphere_eigenvalues(n: int, radius: float, material: Material):
    """Leading small-radius eigenvalues of the far-field blocks.

    For n >= 1 returns (lam1, lam2, lam3): lam2 is the exact closed form
    4 pi i j_n(ks R) / (ks h_n(ks R)); lam1 and lam3 are leading-order
    asymptotics.  For n = 0 returns the exact closed form
    4 pi i j_0'(kp R) / (kp h_0'(kp R)).

    The lam3 constant is fixed by dimensional analysis (one power of ks less
    than a naive reading would give); the dense-block tests pin it.
    """
    if n < 0 or radius <= 0:
        raise ValueError("need n >= 0 and radius > 0")
    ks, kp = material.kappa_s, material.kappa_p
    if n == 0:
        jp = radial_table("regular_j", 0, kp * radius)
        hp = radial_table("outgoing_h", 0, kp * radius)
        return 4.0 * np.pi * 1j * jp.derivatives[0] / (kp * hp.derivatives[0])
    js = radial_table("regular_j", n, ks * radius)
    hs = radial_table("outgoing_h", n, ks * radius)
    cn = 4.0 * np.pi**2 * 1j / (2.0 ** (2 * n + 1) * gamma(n + 0.5) * gamma(n + 1.5))
    lam1 = (cn * 1j * (2 * n - 1) * (2 * n + 1)
            * (ks ** (2 * n) * (n + 1) + kp ** (2 * n) * n)
            / ((n + 1) * ks**2 + n * kp**2) * radius ** (2 * n - 1))
    lam2 = 4.0 * np.pi * 1j * js.values[n] / (ks * hs.values[n])
    lam3 = (cn * 1j * (n * ks**2 + (n + 1) * kp**2) * kp ** (2 * n) * ks ** (2 * n)
            / ((2 * n + 3) * (ks ** (2 * n) * (n + 1) + kp ** (2 * n) * n) * (2 * n + 1))
            * radius ** (2 * n + 3))
    return lam1, lam2, lam3


# ---------------------------------------------------------------------------
# ESMX file format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<5sIddd")   # magic, N, kappa_p, kappa_s, R


def store_scattering_blocks(blocks: ScatteringMatrixBlocks, path) -> None:
    """Write blocks in the binary ESMX layout (little-endian, versioned magic)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ESMX_MAGIC, blocks.order_max,
                              blocks.kappa_p, blocks.kappa_s, blocks.radius))
        interleaved = np.empty((blocks.blocks.shape[0], 3, 3, 2))
        interleaved[..., 0] = blocks.blocks.real
        interleaved[..., 1] = blocks.blocks.imag
        fh.write(interleaved.astype("<f8").tobytes())


def load_scattering_blocks(path) -> ScatteringMatrixBlocks:
    """Read an ESMX file; raises ScatteringFileError with a byte offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ScatteringFileError("truncated header", len(raw))
    magic, order_max, kp, ks, radius = _HEADER.unpack_from(raw, 0)
    if magic != ESMX_MAGIC:
        raise ScatteringFileError(f"bad magic {magic!r}", 0)
    P = mode_count(order_max)
    need = _HEADER.size + P * 9 * 16
    if len(raw) < need:
        raise ScatteringFileError(
            f"truncated payload: need {need} bytes, have {len(raw)}", len(raw))
    flat = np.frombuffer(raw, dtype="<f8", count=P * 9 * 2, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise ScatteringFileError("non-finite entry", _HEADER.size + 8 * int(bad[0]))
    pairs = flat.reshape(P, 3, 3, 2)
    blocks = pairs[..., 0] + 1j * pairs[..., 1]
    return ScatteringMatrixBlocks(order_max, kp, ks, radius, f"file({path})", blocks)
