"""Counterfactual imputation for panel data.

Three base imputers (vertical regression, horizontal regression and
nuclear-norm matrix completion) plus simplex-weighted stacked ensembles
and a pseudo-treatment benchmark.
"""

from .bench import (
    BenchmarkConfig,
    BenchmarkReport,
    SyntheticSpec,
    emit_report,
    generate_synthetic_panel,
    load_report,
    pseudo_treatment_eval,
)
from .elastic_net import (
    ElasticNetFit,
    PenaltyGrid,
    fit_elastic_net,
    kkt_residual,
    lambda_max,
    make_grid,
    select_penalties_cv,
)
from .ensemble import (
    EnsembleWeights,
    StackingProblem,
    ensemble_hc,
    ensemble_vc,
    solve_simplex_ls,
)
from .errors import (
    PanelEnsembleError,
    ParseError,
    IncompletePanel,
    DuplicateCell,
    DomainError,
    InsufficientHistory,
    InsufficientUnits,
    NumericalError,
    MixingError,
    FoldError,
    DegenerateMask,
    ConfigError,
    EnsembleError,
)
from .imputers import (
    METHODS,
    ImputationResult,
    estimate_effect,
    impute,
    impute_horizontal,
    impute_vertical,
)
from .matrix_completion import MCFit, fit_mc, impute_mc, select_lambda_mc, svt
from .panel import MaskedPanel, Panel, dumps_panel, load_panel, restrict, transform, write_panel

__version__ = "0.1.0"
