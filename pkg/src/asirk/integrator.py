"""Time-stepping kernels with explicit memory-register accounting.

The low-storage stepper advances an ASIRK scheme in the ``(omega, gamma,
lambda)`` pattern using exactly three persistent N-vectors:

    Register 1 (Y):  running combination y_n + sum_j omega_j K_j
    Register 2 (L):  h * f(Y_i + gamma_{i-1} K_{i-1})
    Register 3 (K):  K_i = L_i + h * g(Y_i + lambda_i K_i)

Dropping g recovers the 2-register van der Houwen explicit stepper bitwise;
dropping f recovers the 2-register DIRK recursion.  Reference steppers that
store all stage derivatives (ASIRK form and double-tableau IMEX form) exist
for equivalence testing.  Every persistent N-vector is obtained through an
injectable allocator so tests can audit the register counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import (
    NonConvergenceError,
    NumericalBlowupError,
    SchemeValidationError,
)
from .tableau import (
    AsirkScheme,
    ImexScheme,
    ImexTableau,
    LowStorageParams,
    from_low_storage,
)

__all__ = [
    "SplitOde",
    "StepperConfig",
    "MemoryReport",
    "ImplicitStageSolver",
    "solve_implicit_stage",
    "LowStorageStepper",
    "VanDerHouwenStepper",
    "DirkTwoRegisterStepper",
    "step_reference",
    "step_imex_reference",
    "IntegrationResult",
    "integrate",
]


class SplitOde:
    """Additive problem y' = f(t, y) + g(t, y).

    Either part may be ``None`` (identically zero).  ``g_jacobian(t, y)``
    enables analytic Newton; ``g_matrix`` declares g affine (g = M y + q(t)),
    which unlocks the direct linear stage solver with factorization reuse.
    Evaluators must be deterministic and safe to call concurrently on
    distinct state vectors.
    """

    def __init__(
        self,
        dim,
        f=None,
        g=None,
        *,
        g_jacobian=None,
        g_matrix=None,
        g_offset=None,
        name="",
    ):
        self.dim = int(dim)
        self.f = f
        self.name = name
        self.g_matrix = None if g_matrix is None else np.asarray(g_matrix, dtype=float)
        self.g_offset = g_offset
        if g is None and self.g_matrix is not None:
            M = self.g_matrix
            if g_offset is None:
                g = lambda t, y: M @ y
            else:
                g = lambda t, y: M @ y + g_offset(t)
        self.g = g
        if g_jacobian is None and self.g_matrix is not None:
            g_jacobian = lambda t, y: self.g_matrix
        self.g_jacobian = g_jacobian

    @property
    def has_f(self) -> bool:
        return self.f is not None

    @property
    def has_g(self) -> bool:
        return self.g is not None


@dataclass(frozen=True)
class StepperConfig:
    """Inner-solver settings.

    ``solver`` is one of ``auto``, ``fixed-point``, ``newton`` or
    ``linear-direct``; ``auto`` picks linear-direct when the problem declares
    an affine g, otherwise fixed-point with escalation to Newton when the
    update norm stops contracting.
    """

    solver: str = "auto"
    tol: float = 1e-12
    max_iter: int = 100

    def __post_init__(self):
        if self.solver not in ("auto", "fixed-point", "newton", "linear-direct"):
            raise SchemeValidationError(f"unknown solver {self.solver!r}")
        if not (self.tol > 0):
            raise SchemeValidationError("tol must be positive")
        if self.max_iter < 1:
            raise SchemeValidationError("max_iter must be >= 1")


DEFAULT_CONFIG = StepperConfig()


@dataclass
class MemoryReport:
    """Persistent N-vector registers and inner-solver effort of one run."""

    core_registers: int = 0
    solver_scratch: int = 0
    solver_matrix_workspace: int = 0
    inner_iterations: int = 0
    newton_escalations: int = 0
    steps: int = 0


def _default_alloc(n, dtype):
    return np.empty(n, dtype=dtype)


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


class ImplicitStageSolver:
    """Solves the stage relation K = L + h * g(t, y_base + lam * K).

    With ``y_base=None`` the argument of g is K itself (the DIRK stage form
    Y = W + a*g(Y) after the substitution h <- a, lam <- 1).  Fixed-point
    iteration keeps one scratch N-vector; Newton adds a residual vector and
    a dense Jacobian workspace; the direct linear solver caches one LU
    factorization per (lam, h) pair and clears the cache when h changes.
    """

    #: contraction monitor: escalate when the update norm has not shrunk by
    #: at least this factor over the last _WINDOW fixed-point iterations
    _WINDOW = 5
    _FACTOR = 0.9**5

    def __init__(self, ode: SplitOde, config: StepperConfig, allocator=None, dtype=float):
        self.ode = ode
        self.config = config
        self.allocator = allocator or _default_alloc
        self.dtype = dtype
        mode = config.solver
        self.escalate = mode == "auto"
        if mode == "auto":
            mode = "linear-direct" if ode.g_matrix is not None else "fixed-point"
        if mode == "linear-direct" and ode.g_matrix is None:
            raise SchemeValidationError("linear-direct solver needs g_matrix")
        self.mode = mode
        self._scratch = None
        self._resid = None
        self._lu_cache = {}
        self._cache_h = None
        self._prefer_newton = False
        self.scratch_allocated = 0
        self.matrix_workspace = 0
        self.iterations = 0
        self.escalations = 0

    # -- workspace ------------------------------------------------------

    def _get_scratch(self):
        if self._scratch is None:
            self._scratch = self.allocator(self.ode.dim, self.dtype)
            self.scratch_allocated += 1
        return self._scratch

    def _get_resid(self):
        if self._resid is None:
            self._resid = self.allocator(self.ode.dim, self.dtype)
            self.scratch_allocated += 1
        return self._resid

    # -- public entry ----------------------------------------------------

    def solve(self, t, y_base, lam, h, L, K):
        """Fill K (in place) with the stage derivative; returns K.

        ``L`` may be None (treated as zero).  K's entry value is used as the
        initial guess.
        """
        if lam == 0.0:
            # explicit relation K = L + h*g(y_base)
            arg = y_base if y_base is not None else K
            gval = self.ode.g(t, arg)
            K[:] = gval
            K *= h
            if L is not None:
                K += L
            return K
        if self.mode == "linear-direct":
            return self._solve_linear(t, y_base, lam, h, L, K)
        if self.mode == "newton" or (self.escalate and self._prefer_newton):
            return self._solve_newton(t, y_base, lam, h, L, K)
        return self._solve_fixed_point(t, y_base, lam, h, L, K,
                                       escalate=self.escalate)

    # -- strategies ------------------------------------------------------

    def _g_arg(self, y_base, lam, K):
        if y_base is None:
            return K
        arg = self._get_scratch()
        np.multiply(K, lam, out=arg)
        arg += y_base
        return arg

    def _solve_fixed_point(self, t, y_base, lam, h, L, K, escalate):
        tol = self.config.tol
        deltas = []
        for it in range(self.config.max_iter):
            arg = self._g_arg(y_base, lam, K)
            gval = np.asarray(self.ode.g(t, arg))
            knew = gval * h
            if L is not None:
                knew += L
            delta = _inf_norm(knew - K)
            K[:] = knew
            self.iterations += 1
            deltas.append(delta)
            if not np.isfinite(delta):
                if escalate:
                    break
                raise NonConvergenceError(
                    "fixed-point iteration diverged", iterations=it + 1, residual=delta
                )
            if delta <= tol * (1.0 + _inf_norm(K)):
                return K
            if (
                escalate
                and len(deltas) > self._WINDOW
                and deltas[-1] > self._FACTOR * deltas[-1 - self._WINDOW]
            ):
                break
        else:
            if not escalate:
                raise NonConvergenceError(
                    "fixed-point iteration exceeded max_iter",
                    iterations=self.config.max_iter,
                    residual=deltas[-1] if deltas else float("nan"),
                )
        self.escalations += 1
        self._prefer_newton = True  # this regime defeated fixed point; stay with Newton
        # the divergent iterate is worthless as a Newton start; restart from L
        K.fill(0)
        if L is not None:
            K += L
        return self._solve_newton(t, y_base, lam, h, L, K)

    def _g_jac(self, t, arg):
        if self.ode.g_jacobian is not None:
            return np.asarray(self.ode.g_jacobian(t, arg))
        # forward differences, increment sqrt(eps)*(1+|y_j|)
        n = self.ode.dim
        J = np.empty((n, n), dtype=self.dtype)
        base = np.asarray(self.ode.g(t, arg))
        sq = np.sqrt(np.finfo(float).eps)
        pert = np.array(arg, copy=True)
        for j in range(n):
            dj = sq * (1.0 + abs(arg[j]))
            pert[j] = arg[j] + dj
            J[:, j] = (np.asarray(self.ode.g(t, pert)) - base) / dj
            pert[j] = arg[j]
        return J

    def _solve_newton(self, t, y_base, lam, h, L, K):
        # convergence is judged on the Newton update norm: for stiff g the
        # residual itself carries O(h/eps * macheps) evaluation noise and a
        # raw residual bound would be unreachable in float64
        tol = self.config.tol
        resid = self._get_resid()
        if self.matrix_workspace == 0:
            self.matrix_workspace = 1
        last = float("inf")
        for it in range(self.config.max_iter):
            arg = self._g_arg(y_base, lam, K)
            gval = np.asarray(self.ode.g(t, arg))
            np.multiply(gval, -h, out=resid)
            resid += K
            if L is not None:
                resid -= L
            self.iterations += 1
            rnorm = _inf_norm(resid)
            knorm = _inf_norm(K)
            if rnorm <= tol * (1.0 + knorm):
                return K
            J = np.eye(self.ode.dim, dtype=self.dtype) - (h * lam) * self._g_jac(t, arg)
            try:
                delta = np.linalg.solve(J, resid)
            except np.linalg.LinAlgError as exc:
                raise NonConvergenceError(
                    f"singular Newton matrix: {exc}", iterations=it + 1, residual=rnorm
                ) from exc
            K -= delta
            last = _inf_norm(delta)
            if last <= tol * (1.0 + _inf_norm(K)) and np.isfinite(rnorm):
                return K
        raise NonConvergenceError(
            "Newton iteration exceeded max_iter",
            iterations=self.config.max_iter,
            residual=last,
        )

    def _solve_linear(self, t, y_base, lam, h, L, K):
        if self._cache_h is not None and self._cache_h != h:
            self._lu_cache.clear()
        self._cache_h = h
        key = (float(lam), float(h))
        fac = self._lu_cache.get(key)
        if fac is None:
            n = self.ode.dim
            A = np.eye(n) - (h * lam) * self.ode.g_matrix
            fac = scipy.linalg.lu_factor(A)
            self._lu_cache[key] = fac
            self.matrix_workspace = max(self.matrix_workspace, 1)
        arg = y_base if y_base is not None else np.zeros_like(K)
        rhs = h * np.asarray(self.ode.g(t, arg))
        if L is not None:
            rhs += L
        K[:] = scipy.linalg.lu_solve(fac, rhs)
        self.iterations += 1
        return K


def solve_implicit_stage(ode, t, y_base, lam, h, L, config=DEFAULT_CONFIG, allocator=None):
    """One-off solve of K = L + h*g(t, y_base + lam*K); returns a new vector."""
    arrays = [np.asarray(v) for v in (y_base, L) if v is not None]
    dtype = np.result_type(float, *arrays) if arrays else np.dtype(float)
    solver = ImplicitStageSolver(ode, config, allocator=allocator, dtype=dtype)
    K = np.zeros(ode.dim, dtype=dtype)
    if L is not None:
        K[:] = L
    return solver.solve(t, y_base, lam, h, L, K)


# -- steppers -----------------------------------------------------------


def _abscissae(omega, gamma, lam):
    """Stage abscissae of the low-storage pattern: explicit row sums
    (B e) and implicit row sums (C e)."""
    s = len(omega)
    pref = [0.0]
    for j in range(s - 1):
        pref.append(pref[-1] + omega[j])
    c_exp = [pref[i] + (gamma[i - 1] if i >= 1 else 0.0) for i in range(s)]
    c_imp = [pref[i] + lam[i] for i in range(s)]
    return np.array(c_exp), np.array(c_imp)


class LowStorageStepper:
    """Three-register stepper for schemes in the (omega, gamma, lambda) form."""

    core_registers = 3

    def __init__(self, params: LowStorageParams, ode: SplitOde, config=DEFAULT_CONFIG,
                 allocator=None, dtype=float):
        from_low_storage(params)  # validates the expanded scheme (lambda != 0)
        alloc = allocator or _default_alloc
        self.params = params
        self.ode = ode
        self.config = config
        self.w = [float(v) for v in params.omega]
        self.gam = [float(v) for v in params.gamma]
        self.lam = [float(v) for v in params.lam]
        self.c_exp, self.c_imp = _abscissae(self.w, self.gam, self.lam)
        self.Y = alloc(ode.dim, dtype)
        self.L = alloc(ode.dim, dtype)
        self.K = alloc(ode.dim, dtype)
        self.solver = ImplicitStageSolver(ode, config, allocator=alloc, dtype=dtype)

    def start(self, y0):
        self.Y[:] = y0

    @property
    def y(self):
        return self.Y

    def step(self, t, h):
        ode = self.ode
        Y, L, K = self.Y, self.L, self.K
        s = len(self.w)
        for i in range(s):
            if i > 0:
                Y += self.w[i - 1] * K
                K *= self.gam[i - 1]
                K += Y
                f_arg = K
            else:
                f_arg = Y
            if ode.has_f:
                L[:] = ode.f(t + self.c_exp[i] * h, f_arg)
                L *= h
            else:
                L.fill(0)
            if ode.has_g:
                K[:] = L
                self.solver.solve(t + self.c_imp[i] * h, Y, self.lam[i], h, L, K)
            else:
                K[:] = L
        Y += self.w[s - 1] * K

    def memory_report(self, steps=0) -> MemoryReport:
        return MemoryReport(
            core_registers=self.core_registers,
            solver_scratch=self.solver.scratch_allocated,
            solver_matrix_workspace=self.solver.matrix_workspace,
            inner_iterations=self.solver.iterations,
            newton_escalations=self.solver.escalations,
            steps=steps,
        )


class VanDerHouwenStepper:
    """Two-register explicit stepper (weights b, offsets gamma)."""

    core_registers = 2

    def __init__(self, b, gamma, ode: SplitOde, allocator=None, dtype=float):
        if ode.has_g:
            raise SchemeValidationError("explicit stepper requires g == 0")
        if len(gamma) != len(b) - 1:
            raise SchemeValidationError("gamma must have s-1 entries")
        alloc = allocator or _default_alloc
        self.ode = ode
        self.w = [float(v) for v in b]
        self.gam = [float(v) for v in gamma]
        self.c_exp, _ = _abscissae(self.w, self.gam, [0.0] * len(self.w))
        self.Y = alloc(ode.dim, dtype)
        self.K = alloc(ode.dim, dtype)

    def start(self, y0):
        self.Y[:] = y0

    @property
    def y(self):
        return self.Y

    def step(self, t, h):
        Y, K = self.Y, self.K
        s = len(self.w)
        for i in range(s):
            if i > 0:
                Y += self.w[i - 1] * K
                K *= self.gam[i - 1]
                K += Y
                f_arg = K
            else:
                f_arg = Y
            K[:] = self.ode.f(t + self.c_exp[i] * h, f_arg)
            K *= h
        Y += self.w[s - 1] * K

    def memory_report(self, steps=0) -> MemoryReport:
        return MemoryReport(core_registers=self.core_registers, steps=steps)


class DirkTwoRegisterStepper:
    """Two-register DIRK stepper W_i = alpha_i Y_i + (1-alpha_i) W_{i-1}.

    Valid for DIRK tableaus whose subdiagonal columns repeat the weights
    (a_{i+1,i} = ... = a_{s,i} = b_i with b_i = alpha_i a_ii).
    """

    core_registers = 2

    def __init__(self, a_diag, alpha, ode: SplitOde, config=DEFAULT_CONFIG,
                 allocator=None, dtype=float):
        if ode.has_f:
            raise SchemeValidationError("DIRK stepper requires f == 0")
        alloc = allocator or _default_alloc
        self.ode = ode
        self.a_diag = [float(v) for v in a_diag]
        self.alpha = [float(v) for v in alpha]
        if len(self.a_diag) != len(self.alpha):
            raise SchemeValidationError("alpha and a_diag must have equal length")
        # abscissae: c_i = sum_{j<i} b_j + a_ii with b_j = alpha_j a_jj
        b = [al * a for al, a in zip(self.alpha, self.a_diag)]
        acc = 0.0
        self.c_imp = []
        for i, a in enumerate(self.a_diag):
            self.c_imp.append(acc + a)
            acc += b[i]
        self.W = alloc(ode.dim, dtype)
        self.Yv = alloc(ode.dim, dtype)
        self.solver = ImplicitStageSolver(ode, config, allocator=alloc, dtype=dtype)

    def start(self, y0):
        self.W[:] = y0

    @property
    def y(self):
        return self.W

    def step(self, t, h):
        W, Yv = self.W, self.Yv
        for i, (aii, al) in enumerate(zip(self.a_diag, self.alpha)):
            # solve Y = W + h*a_ii*g(Y) via the K-form with lam=1, step h*a_ii
            Yv[:] = W
            self.solver.solve(t + self.c_imp[i] * h, None, 1.0, h * aii, W, Yv)
            beta = 1.0 - al
            W *= beta
            W += al * Yv

    def memory_report(self, steps=0) -> MemoryReport:
        return MemoryReport(
            core_registers=self.core_registers,
            solver_scratch=self.solver.scratch_allocated,
            solver_matrix_workspace=self.solver.matrix_workspace,
            inner_iterations=self.solver.iterations,
            steps=steps,
        )


class ReferenceStepper:
    """All-stages ASIRK stepper (stores every internal derivative K_i)."""

    def __init__(self, scheme: AsirkScheme, ode: SplitOde, config=DEFAULT_CONFIG,
                 allocator=None, dtype=float):
        alloc = allocator or _default_alloc
        self.scheme = scheme
        self.ode = ode
        self.B = scheme.b_array()
        self.C = scheme.c_array()
        self.w = scheme.omega_array()
        self.c_exp = self.B.sum(axis=1)
        self.c_imp = self.C.sum(axis=1)
        s = scheme.s
        self.Ks = [alloc(ode.dim, dtype) for _ in range(s)]
        self.ybase = alloc(ode.dim, dtype)
        self.L = alloc(ode.dim, dtype)
        self.Y = alloc(ode.dim, dtype)
        self.core_registers = s + 3
        self.solver = ImplicitStageSolver(ode, config, allocator=alloc, dtype=dtype)

    def start(self, y0):
        self.Y[:] = y0

    @property
    def y(self):
        return self.Y

    def step(self, t, h):
        ode, s = self.ode, self.scheme.s
        for i in range(s):
            if ode.has_f:
                self.ybase[:] = self.Y
                for j in range(i):
                    self.ybase += self.B[i, j] * self.Ks[j]
                self.L[:] = ode.f(t + self.c_exp[i] * h, self.ybase)
                self.L *= h
            else:
                self.L.fill(0)
            K = self.Ks[i]
            if ode.has_g:
                self.ybase[:] = self.Y
                for j in range(i):
                    self.ybase += self.C[i, j] * self.Ks[j]
                K[:] = self.L
                self.solver.solve(
                    t + self.c_imp[i] * h, self.ybase, self.C[i, i], h, self.L, K
                )
            else:
                K[:] = self.L
        for i in range(s):
            self.Y += self.w[i] * self.Ks[i]

    def memory_report(self, steps=0) -> MemoryReport:
        return MemoryReport(
            core_registers=self.core_registers,
            solver_scratch=self.solver.scratch_allocated,
            solver_matrix_workspace=self.solver.matrix_workspace,
            inner_iterations=self.solver.iterations,
            newton_escalations=self.solver.escalations,
            steps=steps,
        )


class ImexReferenceStepper:
    """Standard IMEX-DIRK stepper on a double tableau (stores all stages).

    Function values are only computed at stages whose tableau column or
    weight is nonzero, so ASIRK-derived 2s-stage tableaus cost the same
    evaluations as the native form.
    """

    def __init__(self, tableau: ImexTableau, ode: SplitOde, config=DEFAULT_CONFIG,
                 allocator=None, dtype=float):
        alloc = allocator or _default_alloc
        self.tableau = tableau
        self.ode = ode
        At, bt, A, b, ct, c = tableau.arrays()
        self.At, self.bt, self.A, self.b, self.ct, self.c = At, bt, A, b, ct, c
        n = tableau.s_total
        self.need_f = [
            ode.has_f and (np.any(At[:, j] != 0) or bt[j] != 0) for j in range(n)
        ]
        self.need_g = [
            ode.has_g and (np.any(A[:, j] != 0) or b[j] != 0) for j in range(n)
        ]
        self.F = [alloc(ode.dim, dtype) if self.need_f[j] else None for j in range(n)]
        self.G = [alloc(ode.dim, dtype) if self.need_g[j] else None for j in range(n)]
        self.S = alloc(ode.dim, dtype)
        self.Z = alloc(ode.dim, dtype)
        self.Y = alloc(ode.dim, dtype)
        self.solver = ImplicitStageSolver(ode, config, allocator=alloc, dtype=dtype)

    def start(self, y0):
        self.Y[:] = y0

    @property
    def y(self):
        return self.Y

    def step(self, t, h):
        ode = self.ode
        n = self.tableau.s_total
        for i in range(n):
            self.S[:] = self.Y
            for j in range(i):
                if self.F[j] is not None and self.At[i, j] != 0:
                    self.S += self.At[i, j] * self.F[j]
                if self.G[j] is not None and self.A[i, j] != 0:
                    self.S += self.A[i, j] * self.G[j]
            aii = self.A[i, i]
            if ode.has_g and aii != 0.0:
                G = self.G[i]
                G[:] = np.asarray(ode.g(t + self.c[i] * h, self.S)) * h
                self.solver.solve(t + self.c[i] * h, self.S, aii, h, None, G)
                self.Z[:] = self.S
                self.Z += aii * G
            else:
                self.Z[:] = self.S
                if self.need_g[i]:
                    self.G[i][:] = ode.g(t + self.c[i] * h, self.Z)
                    self.G[i] *= h
            if self.need_f[i]:
                self.F[i][:] = ode.f(t + self.ct[i] * h, self.Z)
                self.F[i] *= h
        for j in range(n):
            if self.F[j] is not None and self.bt[j] != 0:
                self.Y += self.bt[j] * self.F[j]
            if self.G[j] is not None and self.b[j] != 0:
                self.Y += self.b[j] * self.G[j]

    def memory_report(self, steps=0) -> MemoryReport:
        return MemoryReport(
            core_registers=3 + sum(v is not None for v in self.F + self.G),
            solver_scratch=self.solver.scratch_allocated,
            solver_matrix_workspace=self.solver.matrix_workspace,
            inner_iterations=self.solver.iterations,
            newton_escalations=self.solver.escalations,
            steps=steps,
        )


def step_reference(scheme: AsirkScheme, ode: SplitOde, y, t, h, config=DEFAULT_CONFIG):
    """Single all-stages ASIRK step; returns a new state vector."""
    stepper = ReferenceStepper(scheme, ode, config, dtype=np.asarray(y).dtype)
    stepper.start(np.asarray(y))
    stepper.step(t, h)
    return stepper.Y.copy()


def step_imex_reference(tableau: ImexTableau, ode: SplitOde, y, t, h,
                        config=DEFAULT_CONFIG):
    """Single IMEX-DIRK step on a double tableau; returns a new state vector."""
    stepper = ImexReferenceStepper(tableau, ode, config, dtype=np.asarray(y).dtype)
    stepper.start(np.asarray(y))
    stepper.step(t, h)
    return stepper.Y.copy()


def step_low_storage(params: LowStorageParams, ode: SplitOde, y, t, h,
                     config=DEFAULT_CONFIG):
    """Single 3-register step; returns a new state vector."""
    stepper = LowStorageStepper(params, ode, config, dtype=np.asarray(y).dtype)
    stepper.start(np.asarray(y))
    stepper.step(t, h)
    return stepper.Y.copy()


@dataclass
class IntegrationResult:
    y: np.ndarray
    t: float
    steps: int
    memory: MemoryReport


def make_stepper(method, ode, config=DEFAULT_CONFIG, allocator=None, dtype=float):
    """Pick the stepper matching the method object."""
    if isinstance(method, LowStorageParams):
        return LowStorageStepper(method, ode, config, allocator, dtype)
    if isinstance(method, AsirkScheme):
        return ReferenceStepper(method, ode, config, allocator, dtype)
    if isinstance(method, ImexScheme):
        return ImexReferenceStepper(method.tableau, ode, config, allocator, dtype)
    if isinstance(method, ImexTableau):
        return ImexReferenceStepper(method, ode, config, allocator, dtype)
    raise SchemeValidationError(f"cannot build a stepper from {type(method).__name__}")


def integrate(method, ode, y0, t0, t_end, h, config=DEFAULT_CONFIG, observer=None,
              allocator=None):
    """March from t0 to t_end with constant step h.

    (t_end - t0)/h must be an integer within 1e-9 relative: silent partial
    steps would corrupt measured convergence rates.  The observer is called
    as observer(step_index, t, y_view) with a read-only view, including once
    for the initial state.
    """
    y0 = np.asarray(y0)
    span = t_end - t0
    if span == 0:
        if observer is not None:
            view = y0.view()
            view.flags.writeable = False
            observer(0, t0, view)
        return IntegrationResult(y=y0.copy(), t=t0, steps=0,
                                 memory=MemoryReport(steps=0))
    if not h > 0:
        raise SchemeValidationError("h must be positive")
    ratio = span / h
    n_steps = round(ratio)
    if n_steps < 1 or abs(ratio - n_steps) > 1e-9 * max(1.0, abs(ratio)):
        raise SchemeValidationError(
            f"(t_end - t0)/h = {ratio!r} is not an integer; partial steps are not taken"
        )
    stepper = make_stepper(method, ode, config, allocator, dtype=y0.dtype)
    stepper.start(y0)
    view = stepper.y.view()
    view.flags.writeable = False
    if observer is not None:
        observer(0, t0, view)
    for k in range(n_steps):
        t = t0 + k * h
        try:
            stepper.step(t, h)
        except NonConvergenceError as exc:
            raise NonConvergenceError(
                f"step {k + 1} at t = {t}: {exc}",
                iterations=exc.iterations,
                residual=exc.residual,
            ) from exc
        if not np.all(np.isfinite(stepper.y)):
            raise NumericalBlowupError(
                f"non-finite state after step {k + 1} at t = {t0 + (k + 1) * h}",
                step_index=k + 1,
            )
        if observer is not None:
            observer(k + 1, t0 + (k + 1) * h, view)
    return IntegrationResult(
        y=stepper.y.copy(),
        t=t0 + n_steps * h,
        steps=n_steps,
        memory=stepper.memory_report(steps=n_steps),
    )
