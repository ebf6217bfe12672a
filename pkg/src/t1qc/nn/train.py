"""Training loop, cross-validation orchestration and learning curves."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..model import DatasetSplit, Task, task_label
from ..phantom import LabeledSample
from . import network
from .layers import ShapeMismatch, inverse_frequency_weights
from .network import NetworkSpec
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class EmptyFold(ValueError):
    """A fold has no training or no validation images."""


class DegenerateLabels(ValueError):
    """Only one class is present in a training fold."""


class SizeTooLarge(ValueError):
    """A learning-curve size exceeds the available training pool."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 2
    max_epochs: int = 50
    early_stop_patience: int = 10
    class_weights: tuple[float, ...] | None = None
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("early_stop_patience cannot exceed max_epochs")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self) -> type:
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "class_weights": None if self.class_weights is None else list(self.class_weights),
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
            "seed": self.seed,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TrainConfig":
        return cls(
            learning_rate=float(obj["learning_rate"]),
            batch_size=int(obj["batch_size"]),
            max_epochs=int(obj["max_epochs"]),
            early_stop_patience=int(obj["early_stop_patience"]),
            class_weights=None if obj.get("class_weights") is None else tuple(obj["class_weights"]),
            adam_betas=tuple(obj["adam_betas"]),
            adam_eps=float(obj["adam_eps"]),
            seed=int(obj["seed"]),
            dtype=str(obj["dtype"]),
        )


@dataclass(frozen=True)
class TaskDataset:
    """Volumes and binary labels for one task, restricted to defined labels."""

    task: str
    ids: tuple[str, ...]
    volumes: np.ndarray  # (n, 1, x, y, z)
    labels: np.ndarray  # (n,) int64
    patients: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.volumes.shape[0] != len(self.ids) or self.labels.shape[0] != len(self.ids):
            raise ValueError("ids, volumes and labels must align")

    @property
    def index(self) -> dict[str, int]:
        return {image_id: i for i, image_id in enumerate(self.ids)}

    @property
    def input_shape(self) -> tuple[int, int, int, int]:
        return self.volumes.shape[1:]  # type: ignore[return-value]

    @classmethod
    def from_samples(
        cls, samples: Sequence[LabeledSample], task: Task, dtype: type = np.float32
    ) -> "TaskDataset":
        ids, vols, labels, patients = [], [], [], []
        for s in samples:
            y = task_label(s.label, task)
            if y is None:
                continue
            ids.append(s.label.image_id)
            vols.append(s.volume.data.astype(dtype)[None, ...])
            labels.append(y)
            patients.append(s.patient_id)
        if not ids:
            raise EmptyFold(f"no defined labels for task {task.value}")
        return cls(
            task=task.value,
            ids=tuple(ids),
            volumes=np.stack(vols),
            labels=np.asarray(labels, dtype=np.int64),
            patients=tuple(patients),
        )

    def restrict_split(self, split: DatasetSplit) -> DatasetSplit:
        """Drop ids whose label is undefined for this task from a split."""
        known = set(self.ids)
        folds = tuple(
            type(split.folds[0])(
                train=tuple(i for i in f.train if i in known),
                validation=tuple(i for i in f.validation if i in known),
            )
            for f in split.folds
        )
        return DatasetSplit(folds=folds, test=tuple(i for i in split.test if i in known))


@dataclass(frozen=True)
class TrainedModel:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    input_shape: tuple[int, int, int, int]
    task: str
    fold_index: int
    best_validation_loss: float
    epochs_run: int
    class_weights: tuple[float, ...]
    loss_trace: tuple[tuple[float, float], ...]  # (train, validation) per epoch
    config: TrainConfig


def _batched_eval_loss(
    spec: NetworkSpec,
    params: Mapping[str, np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    batch: int = 8,
) -> float:
    total = 0.0
    for i in range(0, x.shape[0], batch):
        probs, _ = network.forward(spec, params, x[i : i + batch], training=False)
        idx = np.arange(probs.shape[0])
        picked = np.clip(probs[idx, y[i : i + batch]], 1e-30, None)
        total += float(np.sum(weights[y[i : i + batch]] * -np.log(picked)))
    return total / x.shape[0]


def train_fold(
    ds: TaskDataset,
    split: DatasetSplit,
    fold: int,
    spec: NetworkSpec,
    cfg: TrainConfig,
) -> TrainedModel:
    """Train one fold with early stopping on the validation loss.

    Deterministic given identical data, spec, config and fold: initialization,
    epoch shuffling and dropout all derive from (cfg.seed, fold).  The trailing
    batch is dropped when it contains a single sample because batch statistics
    are undefined there.
    """
    index = ds.index
    missing = [i for i in (*split.folds[fold].train, *split.folds[fold].validation) if i not in index]
    if missing:
        raise KeyError(f"task {ds.task}: labels undefined for split members, e.g. {missing[:3]}")
    train_idx = np.asarray([index[i] for i in split.folds[fold].train], dtype=np.int64)
    val_idx = np.asarray([index[i] for i in split.folds[fold].validation], dtype=np.int64)
    if train_idx.size == 0 or val_idx.size == 0:
        raise EmptyFold(f"fold {fold} has {train_idx.size} train / {val_idx.size} validation images")

    y_train = ds.labels[train_idx]
    if np.unique(y_train).size < 2:
        raise DegenerateLabels(f"fold {fold} training labels contain a single class")
    if cfg.class_weights is not None:
        weights = np.asarray(cfg.class_weights, dtype=np.float64)
    else:
        weights = inverse_frequency_weights(y_train, spec.n_classes)

    dtype = cfg.np_dtype
    x_train = ds.volumes[train_idx].astype(dtype, copy=False)
    x_val = ds.volumes[val_idx].astype(dtype, copy=False)
    y_val = ds.labels[val_idx]

    seed_seq = np.random.SeedSequence([cfg.seed, fold])
    init_seq, loop_seq = seed_seq.spawn(2)
    params = network.init_params(spec, ds.input_shape, np.random.default_rng(init_seq), dtype)
    loop_rng = np.random.default_rng(loop_seq)

    state = AdamState()
    best_loss = np.inf
    best_params: dict[str, np.ndarray] | None = None
    best_epoch = -1
    trace: list[tuple[float, float]] = []
    epochs_run = 0
    dropped_singleton = False

    for epoch in range(cfg.max_epochs):
        perm = loop_rng.permutation(train_idx.size)
        epoch_losses = []
        for start in range(0, perm.size, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            if batch.size == 1 and perm.size > 1:
                if not dropped_singleton:
                    log.info("dropping trailing singleton batch (batch statistics undefined)")
                    dropped_singleton = True
                continue
            loss, grads, _ = network.loss_and_grads(
                spec, params, x_train[batch], y_train[batch], weights, rng=loop_rng
            )
            adam_step(params, grads, state, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
            epoch_losses.append(loss)

        val_loss = _batched_eval_loss(spec, params, x_val, y_val, weights)
        trace.append((float(np.mean(epoch_losses)), val_loss))
        epochs_run = epoch + 1

        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            best_epoch = epoch
        elif epoch - best_epoch > cfg.early_stop_patience:
            break

    assert best_params is not None
    return TrainedModel(
        spec=spec,
        params=best_params,
        input_shape=ds.input_shape,
        task=ds.task,
        fold_index=fold,
        best_validation_loss=float(best_loss),
        epochs_run=epochs_run,
        class_weights=tuple(float(w) for w in weights),
        loss_trace=tuple(trace),
        config=cfg,
    )


def predict(model: TrainedModel, volumes: np.ndarray, batch: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode argmax labels and class probabilities, order preserving."""
    if volumes.ndim == 4:
        volumes = volumes[None, ...]
    if volumes.shape[1:] != tuple(model.input_shape):
        raise ShapeMismatch(
            f"volumes have shape {volumes.shape[1:]}, model expects {tuple(model.input_shape)}"
        )
    chunks = []
    x = volumes.astype(model.config.np_dtype, copy=False)
    for i in range(0, x.shape[0], batch):
        probs, _ = network.forward(model.spec, model.params, x[i : i + batch], training=False)
        chunks.append(probs)
    probs = np.concatenate(chunks, axis=0)
    return probs.argmax(axis=1), probs


@dataclass(frozen=True)
class FoldEvaluation:
    fold_index: int
    predictions: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class CrossValidationResult:
    task: str
    models: tuple[TrainedModel, ...]
    fold_evaluations: tuple[FoldEvaluation, ...]
    test_ids: tuple[str, ...]

    def fold_reports(self) -> list:
        """Per-fold EvalReports on the common test set (rank and hard AUC filled)."""
        from dataclasses import replace as _replace

        from ..metrics import (
            ConfusionMatrix,
            classification_metrics,
            hard_decision_auc,
            roc_auc,
        )

        reports = []
        for ev in self.fold_evaluations:
            cm = ConfusionMatrix.from_predictions(ev.labels, ev.predictions)
            report = classification_metrics(cm, task=self.task)
            report = _replace(
                report,
                auc=roc_auc(ev.probabilities[:, 1], ev.labels),
                auc_hard=hard_decision_auc(ev.labels, ev.predictions),
            )
            reports.append(report)
        return reports

    def summary(self) -> dict:
        """Mean and empirical std of every metric across the folds."""
        from ..metrics import mean_std_reports

        return mean_std_reports(self.fold_reports())


def evaluate_on_test(model: TrainedModel, ds: TaskDataset, test_ids: Sequence[str]) -> FoldEvaluation:
    index = ds.index
    test_idx = np.asarray([index[i] for i in test_ids], dtype=np.int64)
    preds, probs = predict(model, ds.volumes[test_idx])
    return FoldEvaluation(
        fold_index=model.fold_index,
        predictions=preds,
        probabilities=probs,
        labels=ds.labels[test_idx],
    )


def run_cross_validation(
    ds: TaskDataset, split: DatasetSplit, spec: NetworkSpec, cfg: TrainConfig
) -> CrossValidationResult:
    """Train every fold and evaluate each fold's model on the common test set."""
    if not split.test:
        raise EmptyFold("cross-validation needs a non-empty test set")
    models = []
    evaluations = []
    for fold in range(split.n_folds):
        model = train_fold(ds, split, fold, spec, cfg)
        models.append(model)
        evaluations.append(evaluate_on_test(model, ds, split.test))
    return CrossValidationResult(
        task=ds.task,
        models=tuple(models),
        fold_evaluations=tuple(evaluations),
        test_ids=tuple(split.test),
    )


def subsample_patient_level(
    ids: Sequence[str], patients: Mapping[str, str], size: int, rng: np.random.Generator
) -> tuple[str, ...]:
    """Seeded whole-patient subsample with at most ``size`` images.

    Requesting the full pool returns it unchanged, so a learning-curve point
    at the full size reproduces the plain cross-validation run.
    """
    if size > len(ids):
        raise SizeTooLarge(f"requested {size} images from a pool of {len(ids)}")
    if size == len(ids):
        return tuple(ids)
    by_patient: dict[str, list[str]] = {}
    for i in ids:
        by_patient.setdefault(patients[i], []).append(i)
    patient_ids = sorted(by_patient)
    rng.shuffle(patient_ids)
    chosen: list[str] = []
    for p in patient_ids:
        if len(chosen) + len(by_patient[p]) <= size:
            chosen.extend(by_patient[p])
        if len(chosen) == size:
            break
    order = {image_id: k for k, image_id in enumerate(ids)}
    return tuple(sorted(chosen, key=order.__getitem__))


@dataclass(frozen=True)
class LearningCurvePoint:
    size: int
    mean_ba: float
    std_ba: float
    fold_bas: tuple[float, ...]


def learning_curve(
    ds: TaskDataset,
    split: DatasetSplit,
    sizes: Sequence[int],
    spec: NetworkSpec,
    cfg: TrainConfig,
) -> list[LearningCurvePoint]:
    """Retrain on seeded patient-level subsamples of each fold's training set.

    Balanced accuracy is measured on the fixed test set for every size and
    fold; results are keyed by the requested sizes.
    """
    from ..metrics import balanced_accuracy

    patients = {image_id: p for image_id, p in zip(ds.ids, ds.patients)}
    points = []
    for size in sizes:
        fold_bas = []
        for fold in range(split.n_folds):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7919, size, fold]))
            sub_train = subsample_patient_level(split.folds[fold].train, patients, size, rng)
            sub_split = DatasetSplit(
                folds=tuple(
                    type(split.folds[0])(
                        train=sub_train if k == fold else split.folds[k].train,
                        validation=split.folds[k].validation,
                    )
                    for k in range(split.n_folds)
                ),
                test=split.test,
            )
            model = train_fold(ds, sub_split, fold, spec, cfg)
            ev = evaluate_on_test(model, ds, split.test)
            fold_bas.append(balanced_accuracy(ev.labels, ev.predictions))
        points.append(
            LearningCurvePoint(
                size=int(size),
                mean_ba=float(np.mean(fold_bas)),
                std_ba=float(np.std(fold_bas)),
                fold_bas=tuple(fold_bas),
            )
        )
    return points
