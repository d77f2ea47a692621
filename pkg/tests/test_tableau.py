"""Coefficient catalog, families, low-storage pattern, and IMEX conversion."""

from fractions import Fraction as F

import numpy as np
import pytest

from asirk.exceptions import (
    SchemeNotFoundError,
    SchemeValidationError,
    SingularParameterError,
)
from asirk.tableau import (
    CATALOG_NAMES,
    AsirkScheme,
    ImexScheme,
    LowStorageParams,
    catalog,
    family_s2,
    family_s3,
    from_low_storage,
    is_low_storage,
    leading_error_objective,
    scheme_from_json,
    scheme_to_json,
    to_imex,
)

LSE = catalog("ASIRK-LSe(3,2)")
LSS = catalog("ASIRK-LSs(3,2)")


class TestCatalog:
    def test_names(self):
        assert set(CATALOG_NAMES) == {
            "ASIRK-LSe(3,2)", "ASIRK-LSs(3,2)", "ASIRK-LS(3,2)", "Zhong",
            "IMEX-SSP2(3,3,2)",
        }

    def test_lse_printed_entries(self):
        assert LSE.B[1][0] == F(573, 2980)
        assert LSE.B[2][1] == F(98, 89)
        assert LSE.omega == (F(3, 20), F(149, 280), F(89, 280))
        assert sum(LSE.omega) == 1

    def test_lss_printed_entries(self):
        assert LSS.B[1][0] == F(8407, 47450)
        assert LSS.B[2][1] == F(648, 599)
        assert LSS.C[2][2] == F(599, 1800)
        # printed omega_2 contradicts the last C row; the consistent value is stored
        assert LSS.omega[1] == F(949, 1800)
        assert sum(LSS.omega) == 1

    def test_zhong_weights(self):
        zh = catalog("Zhong")
        assert zh.omega == (F(1, 8), F(1, 8), F(3, 4))
        assert zh.coefficient_kind == "decimal-printed"
        assert zh.C[0][0] == F("0.485561")

    def test_ssp2_is_tableau_backed(self):
        ssp2 = catalog("IMEX-SSP2(3,3,2)")
        assert isinstance(ssp2, ImexScheme)
        assert ssp2.tableau.s_total == 3
        assert ssp2.tableau.b == (F(1, 3), F(1, 3), F(1, 3))
        assert ssp2.tableau.A[2] == (F(1, 3), F(1, 3), F(1, 3))  # stiffly accurate

    def test_aliases(self):
        assert catalog("lse") is LSE
        assert catalog("zhong") is catalog("Zhong")

    def test_unknown_name(self):
        with pytest.raises(SchemeNotFoundError):
            catalog("RK4")

    @pytest.mark.parametrize("name", ["ASIRK-LSe(3,2)", "ASIRK-LSs(3,2)"])
    def test_rational_omegas_sum_to_one(self, name):
        assert sum(catalog(name).omega) == 1


class TestValidation:
    def test_b_must_be_strictly_lower(self):
        with pytest.raises(SchemeValidationError):
            AsirkScheme("bad", B=[[1]], C=[[F(1, 2)]], omega=[1])

    def test_c_diagonal_nonzero(self):
        with pytest.raises(SchemeValidationError):
            AsirkScheme("bad", B=[[0, 0], [1, 0]], C=[[F(1, 2), 0], [1, 0]],
                        omega=[F(1, 2), F(1, 2)])


class TestToImex:
    @pytest.mark.parametrize("name", ["ASIRK-LSe(3,2)", "ASIRK-LSs(3,2)",
                                      "ASIRK-LS(3,2)", "Zhong"])
    def test_equal_abscissae(self, name):
        tab = to_imex(catalog(name))
        assert tab.c_tilde == tab.c

    def test_lse_weights(self):
        # f is evaluated at the explicit stages (odd positions), g at the
        # implicit ones (even positions); both weight vectors are built from
        # omega on their own support
        tab = to_imex(LSE)
        w = LSE.omega
        assert tab.b == (0, w[0], 0, w[1], 0, w[2])
        assert tab.b_tilde == (w[0], 0, w[1], 0, w[2], 0)

    def test_single_stage_block(self):
        lam = F(1, 2)
        sch = AsirkScheme("euler-like", B=[[0]], C=[[lam]], omega=[1])
        tab = to_imex(sch)
        assert tab.A == ((0, 0), (0, lam))
        assert tab.b == (0, 1)
        # f(Y_1) feeds the implicit stage through the C row
        assert tab.A_tilde == ((0, 0), (lam, 0))
        assert tab.b_tilde == (1, 0)

    def test_block_pattern(self):
        tab = to_imex(LSE)
        for i in range(3):
            for j in range(3):
                assert tab.A_tilde[2 * i][2 * j] == LSE.B[i][j]
                assert tab.A_tilde[2 * i + 1][2 * j] == LSE.C[i][j]
                assert tab.A[2 * i][2 * j + 1] == LSE.B[i][j]
                assert tab.A[2 * i + 1][2 * j + 1] == LSE.C[i][j]


class TestLowStorage:
    def test_expand_lse_params(self):
        p = LowStorageParams(
            omega=(F(3, 20), F(149, 280), F(89, 280)),
            gamma=(F(63, 1490), F(14179, 24920)),
            lam=(F(3, 20), F(3, 20), F(89, 280)),
        )
        sch = from_low_storage(p)
        assert sch.B == LSE.B and sch.C == LSE.C and sch.omega == LSE.omega
        assert sch.B[2][1] == p.omega[1] + p.gamma[1] == F(98, 89)

    def test_zero_lambda_rejected(self):
        p = LowStorageParams(omega=(F(1, 2), F(1, 2)), gamma=(0,), lam=(0, F(1, 2)))
        with pytest.raises(SchemeValidationError):
            from_low_storage(p)

    @pytest.mark.parametrize("k", range(1, 30))
    def test_round_trip(self, k):
        # arbitrary rational parameters: expanding and re-recognizing is lossless
        w = (F(k, 97), F(2 * k + 1, 53), F(5, 7))
        p = LowStorageParams(omega=w, gamma=(F(k, 11), F(-3, k + 2)),
                             lam=(F(1, k), F(1, k), F(k, 19)))
        assert is_low_storage(from_low_storage(p)) == LowStorageParams(
            omega=w, gamma=p.gamma, lam=p.lam, name=from_low_storage(p).name
        )

    def test_recognizes_lse(self):
        p = is_low_storage(LSE)
        assert p is not None
        assert p.lam == (F(3, 20), F(3, 20), F(89, 280))
        assert p.stiffly_accurate

    def test_rejects_zhong(self):
        assert is_low_storage(catalog("Zhong"), tol=F(1, 100000)) is None

    def test_recognizes_ls32(self):
        p = is_low_storage(catalog("ASIRK-LS(3,2)"))
        assert p is not None
        assert p.lam == (F("0.1"), F("0.1"), F("0.329385"))
        assert p.gamma == (F("0.25"), F("0.35"))

    def test_negative_tol_rejected(self):
        with pytest.raises(SchemeValidationError):
            is_low_storage(LSE, tol=-1)


class TestFamilies:
    def test_s2_example_values(self):
        p = family_s2(F(1, 4))
        assert p.lam[0] == -1
        assert p.gamma[0] == F(5, 12)
        assert p.omega == (F(1, 4), F(3, 4))
        assert p.lam[1] == F(3, 4)

    @pytest.mark.parametrize("bad", [0, 1])
    def test_s2_singularities(self, bad):
        with pytest.raises(SingularParameterError):
            family_s2(bad)

    def test_s2_half_gives_zero_lambda(self):
        p = family_s2(F(1, 2))
        assert p.lam[0] == 0
        with pytest.raises(SchemeValidationError):
            from_low_storage(p)

    @pytest.mark.parametrize("k", range(1, 101))
    def test_s2_order2_exact_on_grid(self, k):
        w1 = F(k, 224)  # (0, 0.45], avoiding 0
        if w1 == F(1, 2):
            return
        p = family_s2(w1)
        sch = from_low_storage(p)
        w, B, C = sch.omega, sch.B, sch.C
        e = (F(1), F(1))
        assert sum(w) == 1
        assert sum(w[i] * sum(B[i]) for i in range(2)) == F(1, 2)
        assert sum(w[i] * sum(C[i]) for i in range(2)) == F(1, 2)

    def test_s3_reproduces_lse(self):
        sch = from_low_storage(family_s3(F(3, 20)))
        assert (sch.B, sch.C, sch.omega) == (LSE.B, LSE.C, LSE.omega)

    def test_s3_reproduces_lss(self):
        sch = from_low_storage(family_s3(F(7, 50)))
        assert (sch.B, sch.C, sch.omega) == (LSS.B, LSS.C, LSS.omega)

    def test_s3_singular_at_half(self):
        with pytest.raises(SingularParameterError):
            family_s3(F(1, 2))

    def test_float_omega1_uses_decimal_value(self):
        assert family_s3(0.14).omega[0] == F(7, 50)


class TestLeadingErrorObjective:
    def test_matches_published_sizes(self):
        e_lse = leading_error_objective(family_s3(F(3, 20)))
        e_lss = leading_error_objective(family_s3(F(7, 50)))
        assert e_lse == pytest.approx(0.218, abs=5e-4)
        assert e_lss == pytest.approx(0.220, abs=5e-4)

    def test_equals_norm_of_third_order_residuals(self):
        p = family_s3(F(17, 100))
        sch = from_low_storage(p)
        B, C, w = sch.b_array(), sch.c_array(), sch.omega_array()
        e = np.ones(3)
        Be, Ce = B @ e, C @ e
        res = np.array([
            w @ (B @ Be) - 1 / 6, w @ Be**2 - 1 / 3, w @ (C @ Ce) - 1 / 6,
            w @ Ce**2 - 1 / 3, w @ (B @ Ce) - 1 / 6, w @ (C @ Be) - 1 / 6,
        ])
        assert leading_error_objective(p) == pytest.approx(np.linalg.norm(res), rel=1e-14)

    def test_zero_only_for_vanishing_residuals(self):
        assert leading_error_objective(family_s3(F(3, 20))) > 0

    def test_requires_three_stages(self):
        with pytest.raises(SchemeValidationError):
            leading_error_objective(family_s2(F(1, 4)))


class TestJson:
    @pytest.mark.parametrize("name", CATALOG_NAMES)
    def test_round_trip_bit_exact(self, name):
        sch = catalog(name)
        back = scheme_from_json(scheme_to_json(sch))
        if isinstance(sch, ImexScheme):
            assert back.tableau == sch.tableau
            assert back.name == sch.name
        else:
            assert (back.B, back.C, back.omega) == (sch.B, sch.C, sch.omega)
            assert back.coefficient_kind == sch.coefficient_kind
