"""Domain types and label rules shared by every stage of the QC pipeline.

All types are immutable values and all operations are pure functions, so
everything here is safe to use from concurrent workers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np


class ValidationFailed(ValueError):
    """A domain invariant was violated while building a value."""


class IdMismatch(ValueError):
    """Two records that must refer to the same image do not."""


class MissingAdjudication(ValueError):
    """Raters disagree on straight rejection and no manual resolution was given."""


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid with voxel spacing and optional voxel-to-world affine.

    ``data`` is indexed ``[x, y, z]``; ``spacing`` is mm per voxel along each
    axis.  The affine, when present, is a 4x4 matrix mapping voxel indices to
    world coordinates.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValidationFailed(f"volume data must be 3D, got {self.data.ndim}D")
        if any(d < 1 for d in self.data.shape):
            raise ValidationFailed(f"volume dimensions must be >= 1, got {self.data.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValidationFailed(f"voxel spacing must be positive, got {self.spacing}")
        if not np.isfinite(self.data).all():
            raise ValidationFailed("volume contains non-finite scalars")
        if self.affine is not None and self.affine.shape != (4, 4):
            raise ValidationFailed("affine must be a 4x4 matrix")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class ImageRecord:
    """One catalog row: pseudonymized identifiers plus scanner metadata."""

    image_id: str
    patient_id: str
    series_description: str = ""
    study_description: str = ""
    body_part_examined: str = ""
    n_slices: int = 1
    manufacturer: str = ""
    model_name: str = ""
    field_strength_tesla: float | None = None

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValidationFailed("image_id must be non-empty")
        if self.n_slices < 1:
            raise ValidationFailed(f"n_slices must be >= 1, got {self.n_slices}")
        if self.field_strength_tesla is not None and self.field_strength_tesla not in (1.5, 3.0):
            raise ValidationFailed(
                f"field_strength_tesla must be 1.5, 3.0 or unknown, got {self.field_strength_tesla}"
            )


_GRADE_LEVELS = (0, 1, 2)


@dataclass(frozen=True)
class Grades:
    """Three-level grades for the motion, contrast and noise characteristics."""

    motion: int
    contrast: int
    noise: int

    def __post_init__(self) -> None:
        for name in ("motion", "contrast", "noise"):
            value = getattr(self, name)
            if value not in _GRADE_LEVELS:
                raise ValidationFailed(f"{name} grade must be 0, 1 or 2, got {value!r}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.motion, self.contrast, self.noise)


class Tier(enum.IntEnum):
    """Overall quality class; ordering TIER1 < TIER2 < TIER3 means worse quality."""

    TIER1 = 1
    TIER2 = 2
    TIER3 = 3


def tier_from_grades(grades: Grades) -> Tier:
    """Derive the quality tier from the three characteristic grades.

    Tier 1 requires all grades 0, tier 3 any grade at 2, tier 2 everything
    in between.
    """
    values = grades.as_tuple()
    if any(v == 2 for v in values):
        return Tier.TIER3
    if all(v == 0 for v in values):
        return Tier.TIER1
    return Tier.TIER2


def _check_sr_rule(
    straight_reject: bool, gadolinium: bool | None, grades: Grades | None, what: str
) -> None:
    if straight_reject:
        if gadolinium is not None or grades is not None:
            raise ValidationFailed(f"{what}: straight-rejected images carry no gadolinium flag or grades")
    else:
        if gadolinium is None or grades is None:
            raise ValidationFailed(f"{what}: non-SR images require a gadolinium flag and grades")


@dataclass(frozen=True)
class Annotation:
    """One rater's QC judgment for one image."""

    image_id: str
    rater_id: str
    straight_reject: bool
    gadolinium: bool | None = None
    grades: Grades | None = None
    timestamp: str = ""

    def __post_init__(self) -> None:
        _check_sr_rule(self.straight_reject, self.gadolinium, self.grades, "annotation")


@dataclass(frozen=True)
class ConsensusLabel:
    """The merged two-rater judgment used as ground truth downstream."""

    image_id: str
    straight_reject: bool
    sr_adjudicated: bool = False
    gadolinium: bool | None = None
    grades: Grades | None = None
    tier: Tier | None = None

    def __post_init__(self) -> None:
        _check_sr_rule(self.straight_reject, self.gadolinium, self.grades, "consensus")
        if (self.grades is None) != (self.tier is None):
            raise ValidationFailed("consensus tier must be present exactly when grades are")
        if self.grades is not None and self.tier != tier_from_grades(self.grades):
            raise ValidationFailed("consensus tier must be derived from the grades")


def consensus_merge(
    a: Annotation, b: Annotation, sr_resolution: bool | None = None
) -> ConsensusLabel:
    """Merge two raters' annotations into a consensus label.

    Grades take the elementwise maximum of the two raters (retaining every
    imperfection either rater saw), the gadolinium flag is OR-ed under the
    same conservative principle, and the tier is recomputed.  A disagreement
    on the straight-reject flag requires a manual ``sr_resolution``.
    """
    if a.image_id != b.image_id:
        raise IdMismatch(f"annotations refer to different images: {a.image_id!r} vs {b.image_id!r}")
    if a.rater_id == b.rater_id:
        raise IdMismatch(f"consensus needs two distinct raters, got {a.rater_id!r} twice")

    if a.straight_reject != b.straight_reject:
        if sr_resolution is None:
            raise MissingAdjudication(f"SR disagreement on {a.image_id!r} needs manual resolution")
        if sr_resolution:
            return ConsensusLabel(image_id=a.image_id, straight_reject=True, sr_adjudicated=True)
        kept = a if not a.straight_reject else b
        grades = kept.grades
        assert grades is not None
        return ConsensusLabel(
            image_id=a.image_id,
            straight_reject=False,
            sr_adjudicated=True,
            gadolinium=kept.gadolinium,
            grades=grades,
            tier=tier_from_grades(grades),
        )

    if a.straight_reject:
        return ConsensusLabel(image_id=a.image_id, straight_reject=True)

    assert a.grades is not None and b.grades is not None
    merged = Grades(
        motion=max(a.grades.motion, b.grades.motion),
        contrast=max(a.grades.contrast, b.grades.contrast),
        noise=max(a.grades.noise, b.grades.noise),
    )
    return ConsensusLabel(
        image_id=a.image_id,
        straight_reject=False,
        gadolinium=bool(a.gadolinium) or bool(b.gadolinium),
        grades=merged,
        tier=tier_from_grades(merged),
    )


class Task(enum.Enum):
    """The four binary classification tasks."""

    SR = "sr"
    GADOLINIUM = "gadolinium"
    T3_VS_T21 = "tier3_vs_tiers21"
    T2_VS_T1 = "tier2_vs_tier1"


def task_label(c: ConsensusLabel, task: Task) -> int | None:
    """Binary label of a consensus for one task; ``None`` where undefined.

    SR is defined for every image.  Gadolinium and tier 3 vs tiers 2-1 are
    undefined for SR images; tier 2 vs tier 1 additionally excludes tier 3.
    The positive class (label 1) is SR / with gadolinium / tier 3 / tier 2.
    """
    if task is Task.SR:
        return int(c.straight_reject)
    if c.straight_reject:
        return None
    if task is Task.GADOLINIUM:
        return int(bool(c.gadolinium))
    assert c.tier is not None
    if task is Task.T3_VS_T21:
        return int(c.tier == Tier.TIER3)
    if c.tier == Tier.TIER3:
        return None
    return int(c.tier == Tier.TIER2)


@dataclass(frozen=True)
class Fold:
    """Train/validation image ids for one cross-validation fold."""

    train: tuple[str, ...]
    validation: tuple[str, ...]

    def __post_init__(self) -> None:
        overlap = set(self.train) & set(self.validation)
        if overlap:
            raise ValidationFailed(f"fold train/validation overlap: {sorted(overlap)[:5]}")


@dataclass(frozen=True)
class DatasetSplit:
    """A test set plus per-fold train/validation lists, all disjoint from test."""

    folds: tuple[Fold, ...]
    test: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        test_set = set(self.test)
        for i, fold in enumerate(self.folds):
            leaked = (set(fold.train) | set(fold.validation)) & test_set
            if leaked:
                raise ValidationFailed(f"fold {i} shares images with the test set: {sorted(leaked)[:5]}")

    @property
    def n_folds(self) -> int:
        return len(self.folds)


def check_patient_disjoint(split: DatasetSplit, patients: Mapping[str, str]) -> None:
    """Raise ValidationFailed if any patient crosses a split boundary."""
    test_patients = {patients[i] for i in split.test}
    for k, fold in enumerate(split.folds):
        train_p = {patients[i] for i in fold.train}
        val_p = {patients[i] for i in fold.validation}
        if train_p & val_p:
            raise ValidationFailed(f"fold {k}: patients on both sides of train/validation")
        if (train_p | val_p) & test_patients:
            raise ValidationFailed(f"fold {k}: patients shared with the test set")


# --- line-delimited JSON serialization -------------------------------------

def _grades_to_json(g: Grades | None) -> dict | None:
    if g is None:
        return None
    return {"motion": g.motion, "contrast": g.contrast, "noise": g.noise}


def _grades_from_json(obj: dict | None) -> Grades | None:
    if obj is None:
        return None
    return Grades(motion=int(obj["motion"]), contrast=int(obj["contrast"]), noise=int(obj["noise"]))


def annotation_to_dict(a: Annotation) -> dict:
    return {
        "image_id": a.image_id,
        "rater_id": a.rater_id,
        "straight_reject": a.straight_reject,
        "gadolinium": a.gadolinium,
        "grades": _grades_to_json(a.grades),
        "timestamp": a.timestamp,
    }


def annotation_from_dict(obj: dict) -> Annotation:
    return Annotation(
        image_id=str(obj["image_id"]),
        rater_id=str(obj["rater_id"]),
        straight_reject=bool(obj["straight_reject"]),
        gadolinium=None if obj.get("gadolinium") is None else bool(obj["gadolinium"]),
        grades=_grades_from_json(obj.get("grades")),
        timestamp=str(obj.get("timestamp", "")),
    )


def consensus_to_dict(c: ConsensusLabel) -> dict:
    return {
        "image_id": c.image_id,
        "straight_reject": c.straight_reject,
        "sr_adjudicated": c.sr_adjudicated,
        "gadolinium": c.gadolinium,
        "grades": _grades_to_json(c.grades),
        "tier": None if c.tier is None else int(c.tier),
    }


def consensus_from_dict(obj: dict) -> ConsensusLabel:
    return ConsensusLabel(
        image_id=str(obj["image_id"]),
        straight_reject=bool(obj["straight_reject"]),
        sr_adjudicated=bool(obj.get("sr_adjudicated", False)),
        gadolinium=None if obj.get("gadolinium") is None else bool(obj["gadolinium"]),
        grades=_grades_from_json(obj.get("grades")),
        tier=None if obj.get("tier") is None else Tier(int(obj["tier"])),
    )


def write_jsonl(records: Iterable[dict]) -> str:
    """Serialize dicts as line-delimited JSON (one compact object per line)."""
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)


def read_jsonl(text: str) -> Iterator[dict]:
    for line in text.splitlines():
        line = line.strip()
        if line:
            yield json.loads(line)
