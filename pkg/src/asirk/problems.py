"""Benchmark problems as split ODEs with the three initial-data regimes.

Each factory returns a :class:`Problem` bundling the split right-hand side,
the initial state for the requested variant, the canonical run window, and
the named solution components used for per-component error reporting.

Initial-data variants: ``C`` (consistent, on the relaxation manifold),
``IC`` (consistent plus a pointwise perturbation delta, creating an initial
layer), and ``WP`` (well prepared: consistent plus the eps-expansion
corrections, so the solution is smooth uniformly in eps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.linalg

from .exceptions import DomainError, SchemeValidationError
from .integrator import SplitOde, StepperConfig, integrate
from .tableau import LowStorageParams, family_s3

__all__ = [
    "VARIANTS",
    "RunConfig",
    "Problem",
    "prototype",
    "van_der_pol",
    "broadwell",
    "population",
    "LinearRelaxationModel",
    "linear_relaxation",
    "exact_relaxation_solution",
    "expansion_relaxation_solution",
    "splitmix64_stream",
    "ReferenceResult",
    "reference_solution",
    "PROBLEM_FACTORIES",
    "make_problem",
]

VARIANTS = ("IC", "C", "WP")

DEFAULT_DELTA = 0.05


def _check_variant(variant):
    if variant not in VARIANTS:
        raise SchemeValidationError(f"variant must be one of {VARIANTS}, got {variant!r}")


@dataclass(frozen=True)
class RunConfig:
    t0: float
    t_end: float
    h: float


@dataclass(frozen=True)
class Problem:
    """A split ODE plus initial data, canonical run window and components."""

    ode: SplitOde
    y0: np.ndarray
    config: RunConfig
    components: tuple[tuple[str, slice], ...]
    name: str

    def component_views(self, y):
        return {name: y[sl] for name, sl in self.components}


def prototype(eps, variant="WP", delta=DEFAULT_DELTA) -> Problem:
    """Two-dimensional stiff prototype u' = -v, v' = u + (sin u - v)/eps."""
    _check_variant(variant)
    eps = float(eps)
    if eps <= 0:
        raise SchemeValidationError("eps must be positive")

    def f(t, y):
        return np.array([-y[1], y[0]])

    def g(t, y):
        return np.array([0.0, (math.sin(y[0]) - y[1]) / eps])

    def g_jac(t, y):
        return np.array([[0.0, 0.0], [math.cos(y[0]) / eps, -1.0 / eps]])

    u0 = math.pi / 2
    if variant == "C":
        v0 = 1.0
    elif variant == "IC":
        v0 = 1.0 + delta
    else:
        v0 = 1.0 + (math.pi / 2) * eps - (math.pi / 2) * eps**3
    ode = SplitOde(2, f, g, g_jacobian=g_jac, name="prototype")
    return Problem(
        ode=ode,
        y0=np.array([u0, v0]),
        config=RunConfig(0.0, 1.0, 0.05),
        components=(("u", slice(0, 1)), ("v", slice(1, 2))),
        name="prototype",
    )


def van_der_pol(eps, variant="WP", delta=DEFAULT_DELTA) -> Problem:
    """Van der Pol in relaxation form: y' = z, z' = ((1 - y^2) z - y)/eps.

    The canonical window uses 11 whole steps of h = 0.05 (t_end = 0.55); the
    published endpoint 0.55139 is not divisible by the step and the stepper
    refuses partial steps.
    """
    _check_variant(variant)
    eps = float(eps)
    if eps <= 0:
        raise SchemeValidationError("eps must be positive")

    def f(t, y):
        return np.array([y[1], 0.0])

    def g(t, y):
        return np.array([0.0, ((1.0 - y[0] ** 2) * y[1] - y[0]) / eps])

    def g_jac(t, y):
        return np.array(
            [[0.0, 0.0], [(-2.0 * y[0] * y[1] - 1.0) / eps, (1.0 - y[0] ** 2) / eps]]
        )

    if variant == "C":
        z0 = -2.0 / 3.0
    elif variant == "IC":
        z0 = -2.0 / 3.0 + delta
    else:
        z0 = (
            -2.0 / 3.0
            + (10.0 / 81.0) * eps
            - (292.0 / 2187.0) * eps**2
            - (1814.0 / 19683.0) * eps**3
        )
    ode = SplitOde(2, f, g, g_jacobian=g_jac, name="van-der-pol")
    return Problem(
        ode=ode,
        y0=np.array([2.0, z0]),
        config=RunConfig(0.0, 0.55, 0.05),
        components=(("y", slice(0, 1)), ("z", slice(1, 2))),
        name="van-der-pol",
    )


def broadwell(eps, variant="WP", dx=0.2, delta=DEFAULT_DELTA) -> Problem:
    """Broadwell moment system on [-1, 1] periodic, conservative differences.

    State layout is (rho | m | z) blocks of n = 2/dx grid values.  All
    spatial terms go to the explicit part; the implicit part is the
    pointwise relaxation source (0, 0, (rho^2 + m^2 - 2 rho z)/(2 eps)).
    """
    _check_variant(variant)
    eps = float(eps)
    if eps <= 0:
        raise SchemeValidationError("eps must be positive")
    n = round(2.0 / dx)
    if abs(n * dx - 2.0) > 1e-12:
        raise SchemeValidationError("dx must divide the domain length 2")
    x = -1.0 + dx * np.arange(n)

    def f(t, y):
        m, z = y[n : 2 * n], y[2 * n :]
        mp, mm = np.roll(m, -1), np.roll(m, 1)
        zp, zm = np.roll(z, -1), np.roll(z, 1)
        transport = -(mp - mm) / (2 * dx) + (zp - 2 * z + zm) / (2 * dx)
        fm = -(zp - zm) / (2 * dx) + (mp - 2 * m + mm) / (2 * dx)
        return np.concatenate([transport, fm, transport])

    def g(t, y):
        rho, m, z = y[:n], y[n : 2 * n], y[2 * n :]
        out = np.zeros_like(y)
        out[2 * n :] = (rho**2 + m**2 - 2.0 * rho * z) / (2.0 * eps)
        return out

    def g_jac(t, y):
        rho, m, z = y[:n], y[n : 2 * n], y[2 * n :]
        J = np.zeros((3 * n, 3 * n))
        idx = np.arange(n)
        J[2 * n + idx, idx] = (rho - z) / eps
        J[2 * n + idx, n + idx] = m / eps
        J[2 * n + idx, 2 * n + idx] = -rho / eps
        return J

    a_p, a_u, L = 0.3, 0.1, 2.0
    wavenum = 2.0 * math.pi / L
    rho0 = 1.0 + a_p * np.sin(wavenum * x)
    m0 = rho0 * (0.5 + a_u * np.sin(wavenum * x))
    if np.any(rho0 <= 0):
        raise DomainError("initial density must stay positive")
    z_eq = (rho0**2 + m0**2) / (2.0 * rho0)
    if variant == "C":
        z0 = z_eq
    elif variant == "IC":
        z0 = z_eq + delta
    else:
        drho = a_p * wavenum * np.cos(wavenum * x)
        dm = drho * (0.5 + a_u * np.sin(wavenum * x)) + rho0 * a_u * wavenum * np.cos(
            wavenum * x
        )
        dz_drho = 0.5 - m0**2 / (2.0 * rho0**2)
        dz_dm = m0 / rho0
        H = (-1.0 + dz_drho + dz_dm**2) * dm + dz_drho * dz_dm * drho
        z0 = z_eq + eps * H / (2.0 * rho0)
    ode = SplitOde(3 * n, f, g, g_jacobian=g_jac, name="broadwell")
    return Problem(
        ode=ode,
        y0=np.concatenate([rho0, m0, z0]),
        config=RunConfig(0.0, 0.5, 0.05),
        components=(
            ("rho", slice(0, n)),
            ("m", slice(n, 2 * n)),
            ("z", slice(2 * n, 3 * n)),
        ),
        name="broadwell",
    )


# -- population model ---------------------------------------------------------

_SM64_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def splitmix64_stream(seed: int, count: int) -> np.ndarray:
    """First ``count`` uniforms in [0, 1) from a SplitMix64 generator.

    The algorithm is the public-domain SplitMix64: the state advances by the
    golden-ratio increment and each output is finalized with two xor-shift
    multiplies; the top 53 bits form the double.  Fully specified so other
    implementations can reproduce the stream bit for bit.
    """
    state = seed & _MASK64
    out = np.empty(count)
    for i in range(count):
        state = (state + _SM64_GAMMA) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z = z ^ (z >> 31)
        out[i] = (z >> 11) / float(1 << 53)
    return out


def population(d, seed=42) -> Problem:
    """Population density on [0, 1] periodic: implicit diffusion, explicit
    saturating birth minus unit death.

    The forcing acts only at t = 0 with one random value per grid point in
    [0.8, 1.2]; it is folded into the initial state as a unit impulse (the
    state starts at P = 0), and the forcing term is zero afterwards.  The
    published step h = 20/9 does not divide the published horizon t = 10, so
    the canonical run stops at the largest whole multiple, 4 steps = 80/9.
    """
    d = float(d)
    if d <= 0:
        raise SchemeValidationError("d must be positive")
    n = 100
    dx = 1.0 / n
    x = dx * np.arange(n)
    r_b = np.where(x <= 0.5, 1.0, 100.0)
    eps_b = 0.005

    def f(t, y):
        return r_b * eps_b / (eps_b + y) - y

    lap = np.zeros((n, n))
    idx = np.arange(n)
    lap[idx, idx] = -2.0
    lap[idx, (idx + 1) % n] = 1.0
    lap[idx, (idx - 1) % n] = 1.0
    g_matrix = d / dx**2 * lap

    forcing = 0.8 + 0.4 * splitmix64_stream(seed, n)
    h = 20.0 / 9.0
    ode = SplitOde(n, f, g_matrix=g_matrix, name="population")
    return Problem(
        ode=ode,
        y0=forcing.copy(),
        config=RunConfig(0.0, 4 * h, h),
        components=(("P", slice(0, n)),),
        name="population",
    )


# -- linear relaxation model ---------------------------------------------------


@dataclass(frozen=True)
class LinearRelaxationModel:
    """u' = d1 u + s1 v,  v' = d2 u + s2 v + (c u - v)/eps.

    The defaults are the canonical benchmark parameters: slow dynamics decay
    (a_hat = -3.5), the eps-dependent error terms are visible (b_hat = 3),
    and the one-step error signatures of all catalog schemes separate
    cleanly on the (eps, h) scaling grids.
    """

    delta1: float = -0.5
    sigma1: float = -1.5
    delta2: float = -2.0
    sigma2: float = -1.0
    c: float = 2.0
    eps: float = 1e-6

    def __post_init__(self):
        if not self.eps > 0:
            raise SchemeValidationError("eps must be positive")

    @property
    def a_hat(self) -> float:
        return self.delta1 + self.sigma1 * self.c

    @property
    def b_hat(self) -> float:
        return self.delta2 + (self.sigma2 - self.delta1) * self.c - self.sigma1 * self.c**2

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.delta1, self.sigma1],
                [self.delta2 + self.c / self.eps, self.sigma2 - 1.0 / self.eps],
            ]
        )

    def consistent_state(self, u0=1.0) -> np.ndarray:
        return np.array([u0, self.c * u0])


def linear_relaxation(model: LinearRelaxationModel) -> Problem:
    """The relaxation model as a split ODE (g carries only the 1/eps part)."""
    d1, s1, d2, s2, c, eps = (
        model.delta1,
        model.sigma1,
        model.delta2,
        model.sigma2,
        model.c,
        model.eps,
    )

    def f(t, y):
        return np.array([d1 * y[0] + s1 * y[1], d2 * y[0] + s2 * y[1]])

    g_matrix = np.array([[0.0, 0.0], [c / eps, -1.0 / eps]])
    ode = SplitOde(2, f, g_matrix=g_matrix, name="linear-relaxation")
    return Problem(
        ode=ode,
        y0=model.consistent_state(),
        config=RunConfig(0.0, 1.0, 0.05),
        components=(("u", slice(0, 1)), ("v", slice(1, 2))),
        name="linear-relaxation",
    )


def exact_relaxation_solution(model: LinearRelaxationModel, y0, t) -> np.ndarray:
    """Exact solution at time t through the 2x2 matrix exponential.

    Uses a cancellation-free eigendecomposition: the fast eigenvalue comes
    from the stable quadratic root, the slow one from the product identity
    lam_slow = det/lam_fast.  A direct Pade exponential would carry a
    backward error of order macheps * |t|/eps and drown one-step errors in
    the stiff regime; the near-defective corner falls back to it.
    """
    y0 = np.asarray(y0, dtype=float)
    M = model.matrix()
    a, b = M[0]
    c, d = M[1]
    tr = a + d
    det = a * d - b * c
    disc = tr * tr - 4.0 * det
    if disc <= abs(tr * tr) * 1e-12:
        return scipy.linalg.expm(M * t) @ y0
    root = math.sqrt(disc)
    lam_fast = 0.5 * (tr - root) if tr < 0 else 0.5 * (tr + root)
    lam_slow = det / lam_fast
    # eigenvectors (b, lam - a); b = sigma1 is nonzero for the models of
    # interest, otherwise the system is triangular and the other column works
    if b != 0.0:
        v_fast = np.array([b, lam_fast - a])
        v_slow = np.array([b, lam_slow - a])
    else:
        v_fast = np.array([lam_fast - d, c])
        v_slow = np.array([lam_slow - d, c])
    V = np.column_stack([v_slow, v_fast])
    coeff = np.linalg.solve(V, y0)
    e_slow = math.exp(lam_slow * t)
    arg_fast = lam_fast * t
    e_fast = math.exp(arg_fast) if arg_fast > -745.0 else 0.0
    return coeff[0] * e_slow * v_slow + coeff[1] * e_fast * v_fast


def expansion_relaxation_solution(model: LinearRelaxationModel, u0, h) -> np.ndarray:
    """One-step expansion for consistent data, valid up to O(h^3, h*eps^2)."""
    a, b = model.a_hat, model.b_hat
    eps, c, s1 = model.eps, model.c, model.sigma1
    poly = 1.0 + a * h + 0.5 * a**2 * h**2
    u = u0 * (poly + s1 * b * h * eps)
    v = u0 * (poly * c + b * eps + (a + s1 * c) * b * h * eps)
    return np.array([u, v])


# -- reference trajectories ----------------------------------------------------


@dataclass
class ReferenceResult:
    """Fine-step trajectory sampled on a coarse grid.

    ``uncertainty`` is the max relative deviation against a half-step rerun
    (Richardson); callers must verify it is far below their measured errors.
    """

    times: np.ndarray
    states: np.ndarray  # shape (len(times), dim)
    uncertainty: float

    def state_at(self, k: int) -> np.ndarray:
        return self.states[k]


_REFERENCE_PARAMS = family_s3(Fraction(3, 20))
_REFERENCE_CONFIG = StepperConfig(tol=1e-13)


def _sampled_run(method, ode, y0, t0, h_fine, n_fine, every):
    states = []

    def observer(k, t, y):
        if k % every == 0:
            states.append(y.copy())

    integrate(method, ode, y0, t0, t0 + n_fine * h_fine, h_fine,
              config=_REFERENCE_CONFIG, observer=observer)
    return np.array(states)

def reference_solution(
    problem: Problem,
    h_sample: float,
    refine: int = 256,
    t_end: float | None = None,
    method: LowStorageParams | None = None,
    check: bool = True,
) -> ReferenceResult:
    """Reference trajectory at every multiple of ``h_sample``.

    Integrates with the 3-stage reference scheme at h_sample/refine (inner
    tolerance 1e-13) and, when ``check`` is on, repeats at half the fine step
    to bound the reference error.
    """
    t0 = problem.config.t0
    t_end = problem.config.t_end if t_end is None else t_end
    span = t_end - t0
    n_coarse = round(span / h_sample)
    if n_coarse == 0 or span == 0:
        states = np.array([np.asarray(problem.y0, dtype=float)])
        return ReferenceResult(times=np.array([t0]), states=states, uncertainty=0.0)
    if abs(n_coarse * h_sample - span) > 1e-9 * max(1.0, abs(span)):
        raise SchemeValidationError("h_sample must divide the time window")
    method = _REFERENCE_PARAMS if method is None else method
    h_fine = h_sample / refine
    states = _sampled_run(method, problem.ode, problem.y0, t0, h_fine,
                          n_coarse * refine, refine)
    uncertainty = 0.0
    if check:
        states2 = _sampled_run(method, problem.ode, problem.y0, t0, h_fine / 2,
                               n_coarse * refine * 2, refine * 2)
        scale = np.max(np.abs(states))
        uncertainty = float(np.max(np.abs(states - states2)) / (scale or 1.0))
    times = t0 + h_sample * np.arange(n_coarse + 1)
    return ReferenceResult(times=times, states=states, uncertainty=uncertainty)


PROBLEM_FACTORIES = {
    "prototype": prototype,
    "van-der-pol": van_der_pol,
    "broadwell": broadwell,
    "population": population,
}


def make_problem(name: str, **kwargs) -> Problem:
    """Build a registered problem from a name and a parameter map."""
    if name not in PROBLEM_FACTORIES:
        raise SchemeValidationError(
            f"unknown problem {name!r}; choose from {sorted(PROBLEM_FACTORIES)}"
        )
    return PROBLEM_FACTORIES[name](**kwargs)
