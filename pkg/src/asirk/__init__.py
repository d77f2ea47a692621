"""Low-storage additive semi-implicit (IMEX) Runge-Kutta toolkit.

Scheme catalog and omega1-families, order/stability/stiff-accuracy
analyzers, a 3-register time-stepping kernel with reference steppers for
equivalence testing, benchmark problems, and an experiment harness.
"""

from .tableau import (
    AsirkScheme,
    ImexScheme,
    ImexTableau,
    LowStorageParams,
    CATALOG_NAMES,
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
from .conditions import (
    ConditionReport,
    Table1Row,
    additional_conditions_asirk,
    additional_conditions_imex,
    classify,
    commuting_third_order,
    order_residuals,
    stiff_model_residuals,
)
from .stability import (
    RegionGrid,
    RegionScan,
    l_stability_deficiency,
    region_scan,
    s1_membership,
    stability_value,
)
from .integrator import (
    MemoryReport,
    SplitOde,
    StepperConfig,
    integrate,
)

__version__ = "0.1.0"
