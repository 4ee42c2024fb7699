"""Diverse counterfactual explanations under causal feasibility constraints.

The pipeline: define a feature schema, load a CSV dataset, train the
affine+sigmoid classifier, compile expert causal constraints, then run the
engine to search for K diverse counterfactuals by masked gradient descent.
"""

from .constraints import (
    CausalConstraintSet,
    CompiledConstraints,
    ConstraintError,
    MaskCause,
    StepAudit,
    compile_constraints,
    is_sound_step,
    load_constraints,
    mask_gradient,
    violation_vector,
)
from .engine import (
    BatchItem,
    CFResult,
    Condition,
    EngineConfig,
    EngineError,
    StepRecord,
    derive_seed,
    generate,
    generate_batch,
    result_to_json_dict,
    save_result_csv,
    save_result_json,
)
from .evaluation import (
    EvaluationError,
    RunReport,
    TopKTable,
    evaluate_run,
    summarize_ranks,
)
from .model import LinearModel, ModelError, TrainingConfig, train
from .objective import (
    ContinuousMetric,
    ObjectiveError,
    PerturbationWeights,
    ProximityConfig,
    combined_distance,
    distance_categorical,
    distance_categorical_relaxed,
    distance_continuous,
    diversity,
    hinge_loss,
    objective_and_gradient,
)
from .schema import (
    DataError,
    DatasetSchema,
    DatasetStats,
    EncodedLayout,
    FeatureKind,
    FeatureSchema,
    Instance,
    InstanceSet,
    SchemaError,
    decode,
    encode,
    load_dataset,
    load_schema,
    make_instance,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # schema
    "FeatureKind",
    "FeatureSchema",
    "DatasetSchema",
    "DatasetStats",
    "EncodedLayout",
    "Instance",
    "InstanceSet",
    "SchemaError",
    "DataError",
    "encode",
    "decode",
    "make_instance",
    "load_dataset",
    "load_schema",
    # model
    "LinearModel",
    "TrainingConfig",
    "ModelError",
    "train",
    # objective
    "ContinuousMetric",
    "PerturbationWeights",
    "ProximityConfig",
    "ObjectiveError",
    "distance_continuous",
    "distance_categorical",
    "distance_categorical_relaxed",
    "combined_distance",
    "diversity",
    "hinge_loss",
    "objective_and_gradient",
    # constraints
    "CausalConstraintSet",
    "CompiledConstraints",
    "ConstraintError",
    "MaskCause",
    "StepAudit",
    "compile_constraints",
    "violation_vector",
    "mask_gradient",
    "is_sound_step",
    "load_constraints",
    # engine
    "Condition",
    "EngineConfig",
    "CFResult",
    "StepRecord",
    "BatchItem",
    "EngineError",
    "generate",
    "generate_batch",
    "derive_seed",
    "result_to_json_dict",
    "save_result_json",
    "save_result_csv",
    # evaluation
    "RunReport",
    "TopKTable",
    "EvaluationError",
    "evaluate_run",
    "summarize_ranks",
]
