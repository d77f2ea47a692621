"""Coefficient representations of additive semi-implicit Runge-Kutta schemes.

An ASIRK scheme advances ``y' = f(y) + g(y)`` through internal derivatives

    K_i = h*( f(y_n + sum_j b_ij K_j) + g(y_n + sum_j c_ij K_j) ),
    y_{n+1} = y_n + sum_i omega_i K_i,

explicit in ``f`` (strictly lower triangular ``B``) and diagonally implicit
in ``g`` (lower triangular ``C`` with nonzero diagonal).  The module stores
coefficients as exact :class:`fractions.Fraction` values, provides the
built-in scheme catalog, the omega1-parameterized second-order families, the
low-storage coefficient pattern, and the conversion to the equivalent
double-tableau IMEX form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import (
    SchemeNotFoundError,
    SchemeValidationError,
    SingularParameterError,
)

__all__ = [
    "RATIONAL",
    "DECIMAL_PRINTED",
    "AsirkScheme",
    "LowStorageParams",
    "ImexTableau",
    "ImexScheme",
    "CATALOG_NAMES",
    "as_fraction",
    "catalog",
    "to_imex",
    "from_low_storage",
    "is_low_storage",
    "family_s2",
    "family_s3",
    "leading_error_objective",
    "scheme_to_json",
    "scheme_from_json",
]

RATIONAL = "exact-rational"
DECIMAL_PRINTED = "decimal-printed"

#: verification tolerance attached to each coefficient kind
KIND_TOLERANCE = {RATIONAL: Fraction(0), DECIMAL_PRINTED: Fraction(1, 100000)}


def as_fraction(value) -> Fraction:
    """Coerce a coefficient to an exact Fraction.

    Floats are converted through their shortest decimal repr, so ``0.14``
    becomes ``7/50`` (the decimal the user typed), not the binary expansion.
    Strings accept both ``"p/q"`` and decimal literals.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise SchemeValidationError(f"non-finite coefficient {value!r}")
        return Fraction(repr(value))
    return Fraction(value)


def _fraction_matrix(rows) -> tuple[tuple[Fraction, ...], ...]:
    return tuple(tuple(as_fraction(v) for v in row) for row in rows)


def _fraction_vector(vec) -> tuple[Fraction, ...]:
    return tuple(as_fraction(v) for v in vec)


def _float_matrix(rows) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in rows], dtype=float)


@dataclass(frozen=True)
class AsirkScheme:
    """An s-stage ASIRK scheme: explicit part B, implicit part C, weights omega."""

    name: str
    B: tuple[tuple[Fraction, ...], ...]
    C: tuple[tuple[Fraction, ...], ...]
    omega: tuple[Fraction, ...]
    coefficient_kind: str = RATIONAL

    def __post_init__(self):
        B = _fraction_matrix(self.B)
        C = _fraction_matrix(self.C)
        omega = _fraction_vector(self.omega)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "omega", omega)
        s = len(omega)
        if s == 0:
            raise SchemeValidationError("scheme needs at least one stage")
        if len(B) != s or any(len(r) != s for r in B):
            raise SchemeValidationError("B must be s x s")
        if len(C) != s or any(len(r) != s for r in C):
            raise SchemeValidationError("C must be s x s")
        if self.coefficient_kind not in KIND_TOLERANCE:
            raise SchemeValidationError(
                f"unknown coefficient kind {self.coefficient_kind!r}"
            )
        for i in range(s):
            for j in range(i, s):
                if B[i][j] != 0:
                    raise SchemeValidationError(
                        f"B must be strictly lower triangular; B[{i}][{j}] != 0"
                    )
            for j in range(i + 1, s):
                if C[i][j] != 0:
                    raise SchemeValidationError(
                        f"C must be lower triangular; C[{i}][{j}] != 0"
                    )
            if C[i][i] == 0:
                raise SchemeValidationError(f"C diagonal entry C[{i}][{i}] is zero")

    @property
    def s(self) -> int:
        return len(self.omega)

    @property
    def tolerance(self) -> Fraction:
        """Verification tolerance implied by the coefficient kind."""
        return KIND_TOLERANCE[self.coefficient_kind]

    def b_array(self) -> np.ndarray:
        return _float_matrix(self.B)

    def c_array(self) -> np.ndarray:
        return _float_matrix(self.C)

    def omega_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.omega], dtype=float)


@dataclass(frozen=True)
class LowStorageParams:
    """Parameters (omega, gamma, lambda) of the 3-register coefficient pattern.

    Expanding through :func:`from_low_storage` gives B rows
    ``(omega_1, ..., omega_{i-2}, omega_{i-1}+gamma_{i-1}, 0, ...)`` and C rows
    ``(omega_1, ..., omega_{i-1}, lambda_i, 0, ...)``.
    """

    omega: tuple[Fraction, ...]
    gamma: tuple[Fraction, ...]
    lam: tuple[Fraction, ...]
    name: str = ""

    def __post_init__(self):
        omega = _fraction_vector(self.omega)
        gamma = _fraction_vector(self.gamma)
        lam = _fraction_vector(self.lam)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "lam", lam)
        s = len(omega)
        if s == 0:
            raise SchemeValidationError("need at least one stage")
        if len(lam) != s:
            raise SchemeValidationError("lambda must have one entry per stage")
        if len(gamma) != s - 1:
            raise SchemeValidationError("gamma must have s-1 entries")

    @property
    def s(self) -> int:
        return len(self.omega)

    @property
    def stiffly_accurate(self) -> bool:
        """True when lambda_s = omega_s (last implicit stage equals the output)."""
        return self.lam[-1] == self.omega[-1]


@dataclass(frozen=True)
class ImexTableau:
    """Double Butcher tableau of an IMEX Runge-Kutta method.

    ``A_tilde``/``b_tilde`` apply to the explicit term, ``A``/``b`` to the
    implicit one; abscissae are the row sums.
    """

    A_tilde: tuple[tuple[Fraction, ...], ...]
    b_tilde: tuple[Fraction, ...]
    A: tuple[tuple[Fraction, ...], ...]
    b: tuple[Fraction, ...]

    def __post_init__(self):
        At = _fraction_matrix(self.A_tilde)
        A = _fraction_matrix(self.A)
        bt = _fraction_vector(self.b_tilde)
        b = _fraction_vector(self.b)
        object.__setattr__(self, "A_tilde", At)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b_tilde", bt)
        object.__setattr__(self, "b", b)
        n = len(bt)
        if len(b) != n or len(At) != n or len(A) != n:
            raise SchemeValidationError("tableau blocks must share the stage count")
        for i in range(n):
            if len(At[i]) != n or len(A[i]) != n:
                raise SchemeValidationError("tableau matrices must be square")
            for j in range(i, n):
                if At[i][j] != 0:
                    raise SchemeValidationError("A_tilde must be strictly lower triangular")
            for j in range(i + 1, n):
                if A[i][j] != 0:
                    raise SchemeValidationError("A must be lower triangular")

    @property
    def s_total(self) -> int:
        return len(self.b)

    @property
    def c_tilde(self) -> tuple[Fraction, ...]:
        return tuple(sum(row) for row in self.A_tilde)

    @property
    def c(self) -> tuple[Fraction, ...]:
        return tuple(sum(row) for row in self.A)

    def arrays(self):
        """Return (A_tilde, b_tilde, A, b, c_tilde, c) as float ndarrays."""
        return (
            _float_matrix(self.A_tilde),
            np.array([float(v) for v in self.b_tilde]),
            _float_matrix(self.A),
            np.array([float(v) for v in self.b]),
            np.array([float(v) for v in self.c_tilde]),
            np.array([float(v) for v in self.c]),
        )


@dataclass(frozen=True)
class ImexScheme:
    """Catalog entry backed directly by an IMEX tableau (not an ASIRK scheme)."""

    name: str
    tableau: ImexTableau
    coefficient_kind: str = RATIONAL

    is_asirk_form = False

    @property
    def tolerance(self) -> Fraction:
        return KIND_TOLERANCE[self.coefficient_kind]


def _F(s: str) -> Fraction:
    return Fraction(s)


def _build_catalog():
    lse = AsirkScheme(
        name="ASIRK-LSe(3,2)",
        B=[[0, 0, 0], [_F("573/2980"), 0, 0], [_F("3/20"), _F("98/89"), 0]],
        C=[
            [_F("3/20"), 0, 0],
            [_F("3/20"), _F("3/20"), 0],
            [_F("3/20"), _F("149/280"), _F("89/280")],
        ],
        omega=[_F("3/20"), _F("149/280"), _F("89/280")],
    )
    # The printed omega_2 of ASIRK-LSs(3,2) contradicts the last row of its C
    # and the sum-to-one condition; the construction forces omega to equal
    # that last row, so 949/1800 is stored.
    lss = AsirkScheme(
        name="ASIRK-LSs(3,2)",
        B=[[0, 0, 0], [_F("8407/47450"), 0, 0], [_F("7/50"), _F("648/599"), 0]],
        C=[
            [_F("7/50"), 0, 0],
            [_F("7/50"), _F("7/50"), 0],
            [_F("7/50"), _F("949/1800"), _F("599/1800")],
        ],
        omega=[_F("7/50"), _F("949/1800"), _F("599/1800")],
    )
    ls = AsirkScheme(
        name="ASIRK-LS(3,2)",
        B=[[0, 0, 0], [_F("0.679529"), 0, 0], [_F("0.429529"), _F("0.591085"), 0]],
        C=[
            [_F("0.1"), 0, 0],
            [_F("0.429529"), _F("0.1"), 0],
            [_F("0.429529"), _F("0.241085"), _F("0.329385")],
        ],
        omega=[_F("0.429529"), _F("0.241085"), _F("0.329385")],
        coefficient_kind=DECIMAL_PRINTED,
    )
    zhong = AsirkScheme(
        name="Zhong",
        B=[[0, 0, 0], [_F("8/7"), 0, 0], [_F("71/252"), _F("7/36"), 0]],
        C=[
            [_F("0.485561"), 0, 0],
            [_F("0.306727"), _F("0.951130"), 0],
            [_F("0.45"), _F("-0.263111"), _F("0.189208")],
        ],
        omega=[_F("1/8"), _F("1/8"), _F("3/4")],
        coefficient_kind=DECIMAL_PRINTED,
    )
    ssp2 = ImexScheme(
        name="IMEX-SSP2(3,3,2)",
        tableau=ImexTableau(
            A_tilde=[[0, 0, 0], [_F("1/2"), 0, 0], [_F("1/2"), _F("1/2"), 0]],
            b_tilde=[_F("1/3"), _F("1/3"), _F("1/3")],
            A=[[_F("1/4"), 0, 0], [0, _F("1/4"), 0], [_F("1/3"), _F("1/3"), _F("1/3")]],
            b=[_F("1/3"), _F("1/3"), _F("1/3")],
        ),
    )
    return {sch.name: sch for sch in (lse, lss, ls, zhong, ssp2)}


_CATALOG = _build_catalog()

CATALOG_NAMES = tuple(_CATALOG)

_ALIASES = {
    "lse": "ASIRK-LSe(3,2)",
    "lss": "ASIRK-LSs(3,2)",
    "ls": "ASIRK-LS(3,2)",
    "zhong": "Zhong",
    "ssp2": "IMEX-SSP2(3,3,2)",
    "imex-ssp2": "IMEX-SSP2(3,3,2)",
}


def catalog(name: str):
    """Look up a built-in scheme by name (case-insensitive aliases accepted).

    Returns an :class:`AsirkScheme`, except for ``IMEX-SSP2(3,3,2)`` which is
    not an ASIRK scheme and comes back as an :class:`ImexScheme`.
    """
    if name in _CATALOG:
        return _CATALOG[name]
    key = name.strip().lower()
    if key in _ALIASES:
        return _CATALOG[_ALIASES[key]]
    for cname in _CATALOG:
        if cname.lower() == key:
            return _CATALOG[cname]
    raise SchemeNotFoundError(name)


def to_imex(scheme: AsirkScheme) -> ImexTableau:
    """Rewrite an ASIRK scheme as the equivalent 2s-stage IMEX tableau.

    Stages interleave as (Y_1, Yhat_1, ..., Y_s, Yhat_s): row 2i-1 carries the
    B-row of explicit stage Y_i, row 2i the C-row of implicit stage Yhat_i.
    ``f`` is only evaluated at Y stages and ``g`` only at Yhat stages, so the
    explicit tableau has nonzero entries in odd columns only and the implicit
    one in even columns only; both abscissa vectors are forced equal.
    """
    s = scheme.s
    n = 2 * s
    zero = Fraction(0)
    At = [[zero] * n for _ in range(n)]
    A = [[zero] * n for _ in range(n)]
    bt = [zero] * n
    b = [zero] * n
    for i in range(s):
        for j in range(s):
            At[2 * i][2 * j] = scheme.B[i][j]
            At[2 * i + 1][2 * j] = scheme.C[i][j]
            A[2 * i][2 * j + 1] = scheme.B[i][j]
            A[2 * i + 1][2 * j + 1] = scheme.C[i][j]
        bt[2 * i] = scheme.omega[i]
        b[2 * i + 1] = scheme.omega[i]
    return ImexTableau(A_tilde=At, b_tilde=bt, A=A, b=b)


def from_low_storage(params: LowStorageParams) -> AsirkScheme:
    """Expand (omega, gamma, lambda) into the full coefficient matrices."""
    s = params.s
    zero = Fraction(0)
    B = [[zero] * s for _ in range(s)]
    C = [[zero] * s for _ in range(s)]
    for i in range(s):
        for j in range(i - 1):
            B[i][j] = params.omega[j]
        if i >= 1:
            B[i][i - 1] = params.omega[i - 1] + params.gamma[i - 1]
        for j in range(i):
            C[i][j] = params.omega[j]
        C[i][i] = params.lam[i]
    name = params.name or f"low-storage ASIRK-{s}A"
    return AsirkScheme(name=name, B=B, C=C, omega=params.omega)


def is_low_storage(scheme: AsirkScheme, tol=0) -> LowStorageParams | None:
    """Recognize the 3-register coefficient pattern.

    Returns the parameters when the scheme matches entrywise (exactly for
    rational schemes, within ``tol`` otherwise), else ``None``.
    """
    tol = as_fraction(tol)
    if tol < 0:
        raise SchemeValidationError("tol must be >= 0")
    if scheme.coefficient_kind == RATIONAL:
        tol = Fraction(0)

    def matches(a, b):
        return a == b if tol == 0 else abs(a - b) <= tol

    s = scheme.s
    om = scheme.omega
    for i in range(s):
        for j in range(i - 1):
            if not matches(scheme.B[i][j], om[j]):
                return None
        for j in range(i):
            if not matches(scheme.C[i][j], om[j]):
                return None
    gamma = tuple(scheme.B[i + 1][i] - om[i] for i in range(s - 1))
    lam = tuple(scheme.C[i][i] for i in range(s))
    return LowStorageParams(omega=om, gamma=gamma, lam=lam, name=scheme.name)


def family_s2(omega1) -> LowStorageParams:
    """Second-order 2-stage low-storage family parameterized by omega_1.

    lambda_2 = omega_2 = 1 - omega_1 makes the implicit part stiffly
    accurate; lambda_1 and gamma_1 solve the two order-2 conditions.
    """
    w1 = as_fraction(omega1)
    if w1 == 0 or w1 == 1:
        raise SingularParameterError(f"omega1 = {w1} hits a singular denominator")
    lam1 = (2 * w1 - 1) / (2 * w1)
    gam1 = (-2 * w1**2 + 2 * w1 - 1) / (2 * (w1 - 1))
    w2 = 1 - w1
    return LowStorageParams(
        omega=(w1, w2), gamma=(gam1,), lam=(lam1, w2), name=f"ASIRK-2A(omega1={w1})"
    )


def family_s3(omega1) -> LowStorageParams:
    """Second-order 3-stage low-storage family parameterized by omega_1.

    Fixes lambda_1 = lambda_2 = omega_1 (single factorization for the first
    two stages, and cancellation of the eps^2/h error term on the linear
    relaxation model), lambda_3 = omega_3 (stiff accuracy), and solves the
    remaining order-2 plus stiff-cancellation equations for omega_2, gamma_1,
    gamma_2.  omega1 = 3/20 gives ASIRK-LSe(3,2); omega1 = 7/50 gives
    ASIRK-LSs(3,2).
    """
    w1 = as_fraction(omega1)
    d1 = 2 * w1 - 1
    d2 = 4 * w1**3 - 10 * w1**2 + 6 * w1 - 1
    d3 = 2 * w1**2 - 2 * w1 + 1
    if d1 == 0 or d2 == 0 or d3 == 0:
        raise SingularParameterError(f"omega1 = {w1} hits a singular denominator")
    w2 = (-2 * w1**2 + 2 * w1 - 1) / (2 * d1)
    gam1 = -(2 * (2 * w1**3 - w1**2)) / d3
    gam2 = (4 * w1**4 + 4 * w1**3 - 12 * w1**2 + 6 * w1 - 1) / (2 * d2)
    w3 = 1 - w1 - w2
    return LowStorageParams(
        omega=(w1, w2, w3),
        gamma=(gam1, gam2),
        lam=(w1, w1, w3),
        name=f"ASIRK-3A(omega1={w1})",
    )


def leading_error_objective(params: LowStorageParams) -> float:
    """Size of the leading (third-order) truncation error of a 3-stage scheme.

    Euclidean norm of the six third-order condition residuals of the expanded
    scheme.  On the s=3 family this reproduces the published optimum 0.218 at
    omega1 = 0.15477776467... and 0.220 at omega1 = 7/50.
    """
    if params.s != 3:
        raise SchemeValidationError("objective is defined for 3-stage schemes")
    scheme = from_low_storage(params)
    B = scheme.b_array()
    C = scheme.c_array()
    w = scheme.omega_array()
    e = np.ones(3)
    Be = B @ e
    Ce = C @ e
    res = np.array(
        [
            w @ (B @ Be) - 1 / 6,
            w @ Be**2 - 1 / 3,
            w @ (C @ Ce) - 1 / 6,
            w @ Ce**2 - 1 / 3,
            w @ (B @ Ce) - 1 / 6,
            w @ (C @ Be) - 1 / 6,
        ]
    )
    return float(np.linalg.norm(res))


# -- JSON import/export ------------------------------------------------------
#
# Rational entries serialize as "p/q" strings, which round-trip bit-exactly.


def _frac_str(v: Fraction) -> str:
    return f"{v.numerator}/{v.denominator}"


def _matrix_json(M):
    return [[_frac_str(v) for v in row] for row in M]


def scheme_to_json(scheme) -> str:
    """Serialize an AsirkScheme or ImexScheme to a JSON document."""
    if isinstance(scheme, ImexScheme):
        t = scheme.tableau
        doc = {
            "name": scheme.name,
            "form": "imex",
            "s": t.s_total,
            "A_tilde": _matrix_json(t.A_tilde),
            "b_tilde": [_frac_str(v) for v in t.b_tilde],
            "A": _matrix_json(t.A),
            "b": [_frac_str(v) for v in t.b],
            "coefficient_kind": scheme.coefficient_kind,
        }
    else:
        doc = {
            "name": scheme.name,
            "form": "asirk",
            "s": scheme.s,
            "B": _matrix_json(scheme.B),
            "C": _matrix_json(scheme.C),
            "omega": [_frac_str(v) for v in scheme.omega],
            "coefficient_kind": scheme.coefficient_kind,
        }
    return json.dumps(doc, indent=2)


def scheme_from_json(text: str):
    """Inverse of :func:`scheme_to_json`."""
    doc = json.loads(text)
    kind = doc.get("coefficient_kind", RATIONAL)
    form = doc.get("form", "asirk")
    if form == "imex":
        tableau = ImexTableau(
            A_tilde=_fraction_matrix(doc["A_tilde"]),
            b_tilde=_fraction_vector(doc["b_tilde"]),
            A=_fraction_matrix(doc["A"]),
            b=_fraction_vector(doc["b"]),
        )
        return ImexScheme(name=doc["name"], tableau=tableau, coefficient_kind=kind)
    return AsirkScheme(
        name=doc["name"],
        B=_fraction_matrix(doc["B"]),
        C=_fraction_matrix(doc["C"]),
        omega=_fraction_vector(doc["omega"]),
        coefficient_kind=kind,
    )
