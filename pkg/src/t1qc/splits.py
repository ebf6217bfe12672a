"""Patient-level dataset splitting: stratified test selection and k-fold CV.

Patients are atomic everywhere: all images of a patient land on the same side
of every boundary, which is what prevents identity leakage between training
and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import ConsensusLabel, DatasetSplit, Fold


class TooFewPatients(ValueError):
    """Fewer distinct patients than requested folds."""


class InfeasibleStrata(ValueError):
    """Raised only on request; normally reported as deviations, not raised."""


def stratum_key(label: ConsensusLabel, manufacturer: str) -> str:
    quality = "sr" if label.straight_reject else f"tier{int(label.tier)}"  # type: ignore[arg-type]
    return f"{quality}|{manufacturer}"


def _largest_remainder_targets(counts: Mapping[str, int], n_test: int) -> dict[str, int]:
    total = sum(counts.values())
    keys = sorted(counts)
    fractional = {k: n_test * counts[k] / total for k in keys}
    base = {k: int(np.floor(fractional[k])) for k in keys}
    leftover = n_test - sum(base.values())
    order = sorted(keys, key=lambda k: (-(fractional[k] - base[k]), k))
    for k in order[:leftover]:
        base[k] += 1
    return base


def _achievable_matrix(sizes: Sequence[int], target: int) -> np.ndarray:
    """suffix[i][s] = can patients i.. sum to exactly s."""
    n = len(sizes)
    suffix = np.zeros((n + 1, target + 1), dtype=bool)
    suffix[n][0] = True
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1]
        size = sizes[i]
        if size <= target:
            suffix[i, size:] = suffix[i, size:] | suffix[i + 1, : target + 1 - size]
    return suffix


def _select_exact(
    patient_ids: Sequence[str],
    sizes: Sequence[int],
    target: int,
    fractional: float,
    rng: np.random.Generator,
) -> tuple[list[str], int]:
    """Pick whole patients whose image count lands nearest the exact allocation.

    Subset sums are explored up to target+1 so a one-image overshoot can beat
    a larger unavoidable undershoot when patient grouping is coarse.
    """
    if target <= 0 or not patient_ids:
        return [], 0
    cap = target + 1
    suffix = _achievable_matrix(sizes, cap)
    achievable = [int(s) for s in np.nonzero(suffix[0])[0]]
    goal = min(achievable, key=lambda s: (abs(s - fractional), s != target, s))
    chosen: list[str] = []
    remaining = goal
    for i, (pid, size) in enumerate(zip(patient_ids, sizes)):
        can_take = size <= remaining and suffix[i + 1][remaining - size]
        can_skip = suffix[i + 1][remaining]
        if can_take and (not can_skip or rng.random() < 0.5):
            chosen.append(pid)
            remaining -= size
        if remaining == 0:
            break
    return chosen, goal


@dataclass(frozen=True)
class StratifiedTestSplit:
    """Test selection result: the split plus per-stratum accounting."""

    split: DatasetSplit
    targets: dict[str, int]
    achieved: dict[str, int]

    @property
    def deviations(self) -> dict[str, int]:
        return {
            k: self.achieved.get(k, 0) - self.targets[k]
            for k in self.targets
            if self.achieved.get(k, 0) != self.targets[k]
        }


def stratified_test_split(
    labels: Sequence[ConsensusLabel],
    manufacturers: Mapping[str, str],
    patients: Mapping[str, str],
    n_test: int,
    seed: int = 0,
) -> StratifiedTestSplit:
    """Select a patient-level test set matching the stratum proportions.

    Strata are (SR-or-tier, manufacturer) combinations; targets come from
    proportional allocation by largest remainder, so each stays within one
    image of the exact proportion.  Within a stratum, whole patients are
    chosen by an exact subset-sum walk, so the target is hit whenever patient
    grouping allows; shortfalls appear in ``deviations`` instead of raising.
    """
    if n_test <= 0 or n_test > len(labels):
        raise ValueError(f"n_test must be in [1, {len(labels)}], got {n_test}")
    ids = [lab.image_id for lab in labels]
    strata = {lab.image_id: stratum_key(lab, manufacturers[lab.image_id]) for lab in labels}

    by_patient: dict[str, list[str]] = {}
    for image_id in ids:
        by_patient.setdefault(patients[image_id], []).append(image_id)

    counts: dict[str, int] = {}
    for image_id in ids:
        counts[strata[image_id]] = counts.get(strata[image_id], 0) + 1
    targets = _largest_remainder_targets(counts, n_test)
    fractional = {k: n_test * counts[k] / len(ids) for k in counts}

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    pure: dict[str, list[str]] = {k: [] for k in counts}
    mixed: list[str] = []
    for pid, images in by_patient.items():
        patient_strata = {strata[i] for i in images}
        if len(patient_strata) == 1:
            pure[next(iter(patient_strata))].append(pid)
        else:
            mixed.append(pid)

    achieved = {k: 0 for k in counts}
    test_patients: set[str] = set()

    # mixed-strata patients first, greedily, never exceeding any target
    mixed.sort()
    rng.shuffle(mixed)
    for pid in mixed:
        contrib: dict[str, int] = {}
        for image_id in by_patient[pid]:
            contrib[strata[image_id]] = contrib.get(strata[image_id], 0) + 1
        if all(achieved[k] + c <= targets[k] for k, c in contrib.items()):
            test_patients.add(pid)
            for k, c in contrib.items():
                achieved[k] += c

    # stratum-pure patients via exact subset-sum on the remaining target
    for key in sorted(counts):
        pool = sorted(pure[key])
        rng.shuffle(pool)
        sizes = [len(by_patient[p]) for p in pool]
        chosen, got = _select_exact(
            pool, sizes, targets[key] - achieved[key], fractional[key] - achieved[key], rng
        )
        test_patients.update(chosen)
        achieved[key] += got

    test = tuple(i for i in ids if patients[i] in test_patients)
    train_pool = tuple(i for i in ids if patients[i] not in test_patients)
    split = DatasetSplit(folds=(Fold(train=train_pool, validation=()),), test=test)
    return StratifiedTestSplit(split=split, targets=targets, achieved=achieved)


def patient_kfold(
    pool: Sequence[str],
    patients: Mapping[str, str],
    n_folds: int = 5,
    seed: int = 0,
) -> DatasetSplit:
    """Partition patients into near-equal groups; fold i validates on group i."""
    unique_patients = sorted({patients[i] for i in pool})
    if len(unique_patients) < n_folds:
        raise TooFewPatients(f"{len(unique_patients)} patients cannot fill {n_folds} folds")
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_folds]))
    shuffled = np.asarray(unique_patients, dtype=object)
    rng.shuffle(shuffled)
    groups = np.array_split(shuffled, n_folds)
    folds = []
    for group in groups:
        members = set(group.tolist())
        validation = tuple(i for i in pool if patients[i] in members)
        train = tuple(i for i in pool if patients[i] not in members)
        folds.append(Fold(train=train, validation=validation))
    return DatasetSplit(folds=tuple(folds), test=())


def cv_split(
    labels: Sequence[ConsensusLabel],
    manufacturers: Mapping[str, str],
    patients: Mapping[str, str],
    n_test: int,
    n_folds: int = 5,
    seed: int = 0,
) -> tuple[DatasetSplit, StratifiedTestSplit]:
    """Stratified test split followed by patient k-fold CV on the remainder."""
    test_result = stratified_test_split(labels, manufacturers, patients, n_test, seed)
    pool = test_result.split.folds[0].train
    kfold = patient_kfold(pool, patients, n_folds=n_folds, seed=seed)
    full = DatasetSplit(folds=kfold.folds, test=test_result.split.test)
    return full, test_result
