"""Sum-constrained three-stage gradient boosting for cannibalized-product forecasting."""

from .errors import (
    CForecastError,
    ConfigError,
    ConstraintDataError,
    ContractViolationError,
    DegenerateLeafError,
    EmptyInputError,
    IntegrityError,
    MetricError,
    NumericError,
    ParseError,
    ShapeError,
    UnknownCategoryError,
)
from .gbdt import (
    BoostedEnsemble,
    FeatureMatrix,
    TrainConfig,
    TreeNode,
    best_split,
    fit,
    leaf_weight,
)
from .objectives import (
    GroupIndex,
    ObjectiveEval,
    finetune_eval,
    prediction_ratios,
    se_eval,
    sum_constraint_eval,
)

__version__ = "0.1.0"
