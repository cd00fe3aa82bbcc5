"""Super Learner ensembles for dynamic survival prediction."""

from .data import (
    CsvSchema,
    Dataset,
    FoldAssignment,
    LongitudinalMeasurement,
    PredictionWindow,
    RiskSet,
    SubjectRecord,
    load_dataset,
    risk_set,
    stratified_folds,
    write_dataset,
)
from .survival import (
    IpcwWeights,
    StepFunction,
    breslow_cumhaz,
    breslow_curve,
    censoring_survival,
    cox_survival,
    ipcw,
    kaplan_meier,
)
from .metrics import BS, IBS, TV_AUC, MetricValue, brier, integrated_brier, tv_auc

__version__ = "0.1.0"
