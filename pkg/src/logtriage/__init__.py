"""Log template abstraction, attention-graph root-cause localization, and
confidence-shaped recovery policies at desk scale."""

__version__ = "0.1.0"

from .embedding import PrototypeCodebook, embed_event, fit_prototypes
from .envsim import ClusterSim, FaultSpec, RecoveryAction
from .planner import PolicyBundle, shape_policy
from .reasoner import FaultReasoner, root_cause_scores
from .templates import TemplateEncoder, template_embed
from .training import JointTrainer, LabeledSequence, TrainerConfig

__all__ = [
    "ClusterSim",
    "FaultReasoner",
    "FaultSpec",
    "JointTrainer",
    "LabeledSequence",
    "PolicyBundle",
    "PrototypeCodebook",
    "RecoveryAction",
    "TemplateEncoder",
    "TrainerConfig",
    "embed_event",
    "fit_prototypes",
    "root_cause_scores",
    "shape_policy",
    "template_embed",
    "__version__",
]
