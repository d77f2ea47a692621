"""Algebraic condition checks on schemes: order, coupling, stiff accuracy.

All checks run in exact rational arithmetic; a residual counts as satisfied
when its magnitude is within the scheme's coefficient tolerance (0 for
exact-rational coefficients, 1e-5 for decimal-printed ones).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .exceptions import SchemeValidationError, SingularMatrixError, SingularParameterError
from .tableau import (
    AsirkScheme,
    ImexScheme,
    ImexTableau,
    LowStorageParams,
    as_fraction,
    is_low_storage,
)

__all__ = [
    "ConditionRecord",
    "ConditionReport",
    "Table1Row",
    "order_residuals",
    "imex_order_residuals",
    "commuting_third_order",
    "additional_conditions_asirk",
    "additional_conditions_imex",
    "stiff_model_residuals",
    "classify",
]

HALF = Fraction(1, 2)
THIRD = Fraction(1, 3)
SIXTH = Fraction(1, 6)


def _matvec(M, v):
    n = len(v)
    return tuple(sum(M[i][j] * v[j] for j in range(n)) for i in range(n))


def _dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def _forward_solve(L, rhs):
    """Solve L x = rhs for lower-triangular L in exact arithmetic."""
    n = len(rhs)
    x = [Fraction(0)] * n
    for i in range(n):
        if L[i][i] == 0:
            raise SingularMatrixError(f"zero diagonal entry at row {i}")
        acc = rhs[i] - sum(L[i][j] * x[j] for j in range(i))
        x[i] = acc / L[i][i]
    return tuple(x)


@dataclass(frozen=True)
class ConditionRecord:
    cid: str
    lhs: Fraction
    rhs: Fraction
    tolerance: Fraction

    @property
    def residual(self) -> Fraction:
        return self.lhs - self.rhs

    @property
    def satisfied(self) -> bool:
        return abs(self.residual) <= self.tolerance


@dataclass
class ConditionReport:
    """Bundle of condition records plus the derived classification."""

    scheme_name: str
    records: list[ConditionRecord] = field(default_factory=list)
    classified_order: int = 0
    commuting_order: int = 0
    additional_conditions_met: bool | None = None
    stiff_cancellation_met: bool | None = None
    last_row_is_omega: bool | None = None

    def record(self, cid: str) -> ConditionRecord:
        for r in self.records:
            if r.cid == cid:
                return r
        raise KeyError(cid)

    def to_json_dict(self) -> dict:
        return {
            "scheme": self.scheme_name,
            "conditions": [
                {
                    "id": r.cid,
                    "lhs": str(r.lhs),
                    "rhs": str(r.rhs),
                    "residual": str(r.residual),
                    "residual_float": float(r.residual),
                    "satisfied": r.satisfied,
                }
                for r in self.records
            ],
            "classified_order": self.classified_order,
            "commuting_order": self.commuting_order,
            "additional_conditions_met": self.additional_conditions_met,
            "stiff_cancellation_met": self.stiff_cancellation_met,
        }


_ORDER_LEVEL = {
    "Eq14": 1,
    "Eq15": 2,
    "Eq16": 2,
    "Eq17": 3,
    "Eq18": 3,
    "Eq19": 3,
    "Eq20": 3,
    "Eq21": 3,
    "Eq22": 3,
}


def order_residuals(scheme: AsirkScheme) -> ConditionReport:
    """Evaluate the nine order conditions up to p = 3 on (B, C, omega).

    Matrix forms are used, so any stage count works.  The classified order
    is the largest p with every condition of order <= p satisfied; the
    commuting order additionally accepts p = 3 when only the two coupling
    conditions fail but their sum vanishes (commuting Jacobians).
    """
    B, C, w = scheme.B, scheme.C, scheme.omega
    s = scheme.s
    e = (Fraction(1),) * s
    Be, Ce = _matvec(B, e), _matvec(C, e)
    tol = scheme.tolerance
    entries = [
        ("Eq14", _dot(w, e), Fraction(1)),
        ("Eq15", _dot(w, Be), HALF),
        ("Eq16", _dot(w, Ce), HALF),
        ("Eq17", _dot(w, _matvec(B, Be)), SIXTH),
        ("Eq18", _dot(w, tuple(v * v for v in Be)), THIRD),
        ("Eq19", _dot(w, _matvec(C, Ce)), SIXTH),
        ("Eq20", _dot(w, tuple(v * v for v in Ce)), THIRD),
        ("Eq21", _dot(w, _matvec(B, Ce)), SIXTH),
        ("Eq22", _dot(w, _matvec(C, Be)), SIXTH),
    ]
    report = ConditionReport(scheme_name=scheme.name)
    report.records = [ConditionRecord(cid, lhs, rhs, tol) for cid, lhs, rhs in entries]

    order = 0
    for p in (1, 2, 3):
        if all(r.satisfied for r in report.records if _ORDER_LEVEL[r.cid] == p):
            order = p
        else:
            break
    report.classified_order = order

    report.commuting_order = order
    if order == 2:
        rest = [r for r in report.records if r.cid in ("Eq17", "Eq18", "Eq19", "Eq20")]
        if all(r.satisfied for r in rest) and abs(commuting_third_order(scheme)) <= tol:
            report.commuting_order = 3
    return report


def commuting_third_order(scheme: AsirkScheme) -> Fraction:
    """Residual of the merged coupling condition w^t(BC + CB)e = 1/3.

    When the Jacobians of the two split terms commute, the two third-order
    coupling conditions collapse to this single one; the residual is exactly
    the sum of their individual residuals.
    """
    e = (Fraction(1),) * scheme.s
    lhs = _dot(scheme.omega, _matvec(scheme.B, _matvec(scheme.C, e)))
    lhs += _dot(scheme.omega, _matvec(scheme.C, _matvec(scheme.B, e)))
    return lhs - THIRD


def additional_conditions_asirk(scheme: AsirkScheme) -> ConditionReport:
    """Stiff-accuracy conditions in (B, C, omega) form.

    These are the rho -> 0 limit of the double-tableau conditions, usable
    because the implicit block of the equivalent 2s-stage tableau is
    singular.  Also flags whether the last row of C equals omega, which
    makes the middle condition automatic for first-order schemes.
    """
    s = scheme.s
    e = (Fraction(1),) * s
    Ce = _matvec(scheme.C, e)
    Ce2 = tuple(v * v for v in Ce)
    x = _forward_solve(scheme.C, Ce2)
    tol = scheme.tolerance
    report = ConditionReport(scheme_name=scheme.name)
    report.records = [
        ConditionRecord("Eq29a", _dot(scheme.omega, e), Fraction(1), tol),
        ConditionRecord("Eq29b", _dot(scheme.omega, x), Fraction(1), tol),
        ConditionRecord("Eq29c", _dot(scheme.omega, _matvec(scheme.B, e)), HALF, tol),
    ]
    report.additional_conditions_met = all(r.satisfied for r in report.records)
    last_row = scheme.C[s - 1]
    report.last_row_is_omega = all(
        abs(last_row[j] - scheme.omega[j]) <= tol for j in range(s)
    )
    return report


def additional_conditions_imex(tableau: ImexTableau, tol=0) -> ConditionReport:
    """Stiff-accuracy conditions b^t A^{-1} c~ = 1, b^t A^{-1} c~^2 = 1,
    b^t A^{-1} A~ c~ = 1/2 on a genuine IMEX tableau.

    Raises SingularMatrixError when the implicit matrix is not invertible
    (as happens for every ASIRK-derived tableau; use the (B, C, omega) form
    then).
    """
    A, At, b = tableau.A, tableau.A_tilde, tableau.b
    ct = tableau.c_tilde
    ct2 = tuple(v * v for v in ct)
    Atc = _matvec(At, ct)
    x1 = _forward_solve(A, ct)
    x2 = _forward_solve(A, ct2)
    x3 = _forward_solve(A, Atc)
    tol = as_fraction(tol)
    report = ConditionReport(scheme_name="imex-tableau")
    report.records = [
        ConditionRecord("Eq28a", _dot(b, x1), Fraction(1), tol),
        ConditionRecord("Eq28b", _dot(b, x2), Fraction(1), tol),
        ConditionRecord("Eq28c", _dot(b, x3), HALF, tol),
    ]
    report.additional_conditions_met = all(r.satisfied for r in report.records)
    return report


def stiff_model_residuals(params: LowStorageParams):
    """Residuals of the two cancellation conditions on the linear relaxation
    model: r48 = 0 removes the eps*h term in u, r49 = 0 the eps^2/h term in v.

    Requires the 3-stage structure with lambda_1 = lambda_2.
    """
    if params.s != 3:
        raise SchemeValidationError("stiff model residuals need s = 3")
    if params.lam[0] != params.lam[1]:
        raise SchemeValidationError("structure requires lambda_1 = lambda_2")
    lam = as_fraction(params.lam[0])
    w1, w2, _w3 = params.omega
    g1, g2 = params.gamma
    if lam == 0:
        raise SingularParameterError("lambda = 0")
    if w1 + w2 - 1 == 0:
        raise SingularParameterError("omega_1 + omega_2 = 1")
    lhs48 = (
        w2 * lam * (w1 + g1)
        + (w1 + w2 - 1) * (w1 * (w2 + g2) - lam * (w1 + w2 + g2))
    ) / lam**2
    r48 = lhs48 - 1
    r49 = (w1 - lam) * (w2 - lam) / (lam**2 * (w1 + w2 - 1))
    return r48, r49


# -- full additive order conditions for genuine IMEX tableaus ----------------

def imex_order_residuals(tableau: ImexTableau, tol=0) -> ConditionReport:
    """The 20 order conditions up to p = 3 of an additive Runge-Kutta method,
    valid also when the two abscissa vectors differ.
    """
    At, bt = tableau.A_tilde, tableau.b_tilde
    A, b = tableau.A, tableau.b
    ct, c = tableau.c_tilde, tableau.c
    tol = as_fraction(tol)
    mats = {"f": At, "g": A}
    wts = {"f": bt, "g": b}
    cs = {"f": ct, "g": c}
    records = []
    for r in "fg":
        records.append(
            ConditionRecord(f"p1[{r}]", sum(wts[r]), Fraction(1), tol)
        )
    for r in "fg":
        for l in "fg":
            records.append(
                ConditionRecord(f"p2[{r}{l}]", _dot(wts[r], cs[l]), HALF, tol)
            )
    for r in "fg":
        for a in "fg":
            for bb in "fg":
                if a > bb:
                    continue  # unordered pair
                prod = tuple(x * y for x, y in zip(cs[a], cs[bb]))
                records.append(
                    ConditionRecord(f"p3[{r}({a}{bb})]", _dot(wts[r], prod), THIRD, tol)
                )
    for r in "fg":
        for m in "fg":
            for l in "fg":
                v = _matvec(mats[m], cs[l])
                records.append(
                    ConditionRecord(f"p3[{r}{m}{l}]", _dot(wts[r], v), SIXTH, tol)
                )
    report = ConditionReport(scheme_name="imex-tableau")
    report.records = records
    order = 0
    lvl = {1: [r for r in records if r.cid.startswith("p1")],
           2: [r for r in records if r.cid.startswith("p2")],
           3: [r for r in records if r.cid.startswith("p3")]}
    for p in (1, 2, 3):
        if all(r.satisfied for r in lvl[p]):
            order = p
        else:
            break
    report.classified_order = order
    report.commuting_order = order
    return report


@dataclass(frozen=True)
class Table1Row:
    """Summary row: order, stiff-accuracy flags, predicted one-step error
    forms on the linear relaxation model, and memory registers required."""

    name: str
    order: int
    commuting_order: int
    additional_conditions: bool
    stiff_error_u: str
    stiff_error_v: str
    registers: str

    @property
    def order_label(self) -> str:
        if self.commuting_order > self.order:
            return f"{self.order} ({self.commuting_order})"
        return str(self.order)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "order": self.order,
            "commuting_order": self.commuting_order,
            "additional_conditions": self.additional_conditions,
            "stiff_error_u": self.stiff_error_u,
            "stiff_error_v": self.stiff_error_v,
            "registers": self.registers,
        }


def _stiff_error_strings_asirk(additional: bool, cancels: bool):
    u = "O(h^3, h^2*eps)" if cancels else "O(h^3, h*eps)"
    if cancels:
        v = "O(h^3, h*eps)"
    else:
        head = "h^3" if additional else "h^2"
        v = f"O({head}, h*eps, eps^2/h)"
    return u, v


def classify(scheme) -> Table1Row:
    """Aggregate order, stiff-accuracy and storage classification.

    The predicted one-step error forms on the linear relaxation model follow
    the known mapping: cancellation of both stiff residuals removes the
    negative power of h and upgrades the eps-dependence in u; failing the
    additional conditions drops the pure-h order of v to 2.  For genuine
    IMEX tableaus the prediction is keyed on which of the three additional
    conditions hold.
    """
    if isinstance(scheme, ImexScheme):
        rep = imex_order_residuals(scheme.tableau, tol=scheme.tolerance)
        add = additional_conditions_imex(scheme.tableau, tol=scheme.tolerance)
        sat = [r.satisfied for r in add.records]
        if all(sat):
            u, v = "O(h^3, h^2*eps)", "O(h^3, h*eps)"
        elif sat[0] and sat[1]:
            u, v = "O(h^3, h^2*eps)", "O(h^2, h*eps)"
        else:
            u, v = "unknown", "unknown"
        n_imp = scheme.tableau.s_total
        return Table1Row(
            name=scheme.name,
            order=rep.classified_order,
            commuting_order=rep.commuting_order,
            additional_conditions=add.additional_conditions_met,
            stiff_error_u=u,
            stiff_error_v=v,
            registers=f">={n_imp + 1}",
        )

    rep = order_residuals(scheme)
    add = additional_conditions_asirk(scheme)
    params = is_low_storage(scheme, tol=scheme.tolerance)
    cancels = False
    if params is not None and params.s == 3 and params.lam[0] == params.lam[1]:
        r48, r49 = stiff_model_residuals(params)
        cancels = abs(r48) <= scheme.tolerance and abs(r49) <= scheme.tolerance
    u, v = _stiff_error_strings_asirk(add.additional_conditions_met, cancels)
    registers = "3" if params is not None else f">={scheme.s + 1}"
    return Table1Row(
        name=scheme.name,
        order=rep.classified_order,
        commuting_order=rep.commuting_order,
        additional_conditions=add.additional_conditions_met,
        stiff_error_u=u,
        stiff_error_v=v,
        registers=registers,
    )
