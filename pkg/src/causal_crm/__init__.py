"""Causal structure learning, do-interventions and counterfactual explanations for tabular CRM data."""

__version__ = "0.1.0"

from .bayesnet import (  # noqa: E402
    BayesianNetwork, Cpd, DiscreteBayesianNetwork, InterventionSpec, Marginal, do_intervene,
    fit_cpds, marginal, query_after_intervention,
)
from .blackbox import RandomForest, accuracy, predict, predict_proba, train_forest  # noqa: E402
from .counterfactual import (  # noqa: E402
    Candidate, CfQuery, CounterfactualExplainer, CounterfactualSet, check_constraints, distance,
    dpp_diversity, generate_counterfactuals, mad, proximity_score, wachter_loss,
)
from .dataset import (  # noqa: E402
    ActionabilityConstraint, ColumnSpec, Dataset, DiscretizationRule, EncodedDataset,
    MeanThresholdDiscretizer, apply_remaps, compute_mean_threshold, discretize, load_csv,
    load_schema, train_test_split, undersample_balance,
)
from .exceptions import (  # noqa: E402
    CausalCRMError, ConvergenceError, CounterfactualExhaustedError, DegenerateDataError,
    KindError, ParseError, SchemaError,
)
from .notears import (  # noqa: E402
    Dag, NotearsConfig, NotearsStructureLearner, acyclicity_h, export_dot, is_acyclic,
    learn_structure, structural_hamming_distance,
)

__all__ = [
    "__version__",
    "BayesianNetwork",
    "Cpd",
    "DiscreteBayesianNetwork",
    "InterventionSpec",
    "Marginal",
    "do_intervene",
    "fit_cpds",
    "marginal",
    "query_after_intervention",
    "RandomForest",
    "accuracy",
    "predict",
    "predict_proba",
    "train_forest",
    "Candidate",
    "CfQuery",
    "CounterfactualExplainer",
    "CounterfactualSet",
    "check_constraints",
    "distance",
    "dpp_diversity",
    "generate_counterfactuals",
    "mad",
    "proximity_score",
    "wachter_loss",
    "ActionabilityConstraint",
    "ColumnSpec",
    "Dataset",
    "DiscretizationRule",
    "EncodedDataset",
    "MeanThresholdDiscretizer",
    "apply_remaps",
    "compute_mean_threshold",
    "discretize",
    "load_csv",
    "load_schema",
    "train_test_split",
    "undersample_balance",
    "CausalCRMError",
    "ConvergenceError",
    "CounterfactualExhaustedError",
    "DegenerateDataError",
    "KindError",
    "ParseError",
    "SchemaError",
    "Dag",
    "NotearsConfig",
    "NotearsStructureLearner",
    "acyclicity_h",
    "export_dot",
    "is_acyclic",
    "learn_structure",
    "structural_hamming_distance",
]
