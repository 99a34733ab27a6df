"""gaugecalc: gauge (Henstock-Kurzweil-Stieltjes) integration toolkit."""

from .intervals import (
    Box,
    Gauge,
    GaugeBudgetError,
    Partition,
    PartitionReport,
    TaggedPartition,
    cousin_partition,
    enumerate_partitions,
    is_partition,
    random_fine_partition,
)
from .funcspace import (
    Expr,
    EvalDomainError,
    IntervalFunction,
    ParseError,
    PointFunction,
    SuperadditiveFn,
    ifn_eval,
    parse,
    partition_defect,
    positivity_report,
    to_text,
)
from .hk import (
    CellError,
    IntegralResult,
    cell_errors,
    cumulative,
    delta_variation_bruteforce,
    delta_variation_dp,
    delta_variation_dp_table,
    hk_integrate,
    indefinite_hk,
    pairwise_sum,
    residual_cell_fn,
    riemann_sum,
    volume_power_cell_fn,
)
from .mc import (
    ControlFunction1D,
    McVerdict,
    bounded_control,
    chebyshev_points,
    combine_controls,
    control_from_gauges,
    gauge_from_control,
    glue_controls,
    mc_defect,
    mct_control,
    rescale,
    verify_mc,
    verify_mc_nd,
)
from .calculus import (
    IdentityReport,
    MctReport,
    check_change_of_variables,
    check_interval_additivity,
    check_monotone,
    check_parts,
    constancy_check,
    mct_experiment,
)
from .limits import increment, one_sided_limit

__version__ = "0.1.0"
