"""Desk-scale multi-task transformer training with shared parallel
attention layers over a frozen backbone, plus task-relatedness and
capacity diagnostics."""

from .backbone import BackboneConfig, Encoding, encode, init_backbone
from .engine import TrainPlan, RunRecord, run_training
from .model import MtlModel
from .spal import SpalConfig, attach_spals, capacity_fraction, count_spal_params
from .tasks import TaskData, TaskExample, TaskSpec

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "Encoding", "encode", "init_backbone",
    "TrainPlan", "RunRecord", "run_training",
    "MtlModel",
    "SpalConfig", "attach_spals", "capacity_fraction", "count_spal_params",
    "TaskData", "TaskExample", "TaskSpec",
    "__version__",
]
