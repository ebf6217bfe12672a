"""Quality control of 3D T1-weighted brain MR volumes.

Cohort selection from scanner metadata, preprocessing to a fixed grid, a
two-rater visual annotation protocol with consensus labels, and a from-scratch
3D convolutional classifier for four QC tasks, validated on synthetic
phantoms.
"""

from .model import (
    Annotation,
    ConsensusLabel,
    DatasetSplit,
    Fold,
    Grades,
    ImageRecord,
    Task,
    Tier,
    Volume,
    consensus_merge,
    task_label,
    tier_from_grades,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "ConsensusLabel",
    "DatasetSplit",
    "Fold",
    "Grades",
    "ImageRecord",
    "Task",
    "Tier",
    "Volume",
    "consensus_merge",
    "task_label",
    "tier_from_grades",
    "__version__",
]
