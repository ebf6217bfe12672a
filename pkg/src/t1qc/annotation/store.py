"""Append-only annotation store backing the two-rater workflow.

Every submission is retained (later submissions supersede earlier ones as the
rater's current judgment), consensus is derived on demand, and the whole
state replays from a JSON-lines log so no database server is needed in the
restricted environments this runs in.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..model import (
    Annotation,
    ConsensusLabel,
    MissingAdjudication,
    ValidationFailed,
    annotation_from_dict,
    annotation_to_dict,
    consensus_merge,
    consensus_to_dict,
)


class UnknownRater(KeyError):
    pass


class UnknownImage(KeyError):
    pass


class NotReady(ValueError):
    """Consensus requested before both raters annotated the image."""


@dataclass(frozen=True)
class StoredAnnotation:
    annotation: Annotation
    version: int


@dataclass(frozen=True)
class ProgressSummary:
    per_rater: dict[str, dict[str, int]]  # rater -> {"done": n, "remaining": m}
    adjudication_queue: tuple[str, ...]
    consensus_distribution: dict[str, int]  # "sr" / "tier1".."tier3" / "pending"

    def to_dict(self) -> dict:
        return {
            "per_rater": self.per_rater,
            "adjudication_queue": list(self.adjudication_queue),
            "consensus_distribution": self.consensus_distribution,
        }


class AnnotationStore:
    """Two-rater annotation state over a fixed image queue.

    Mutations serialize through a single lock; reads work on snapshots of
    immutable values.
    """

    def __init__(
        self,
        image_ids: Sequence[str],
        raters: Sequence[str],
        log_path: str | Path | None = None,
    ) -> None:
        if len(raters) != 2:
            raise ValueError(f"the protocol uses exactly two raters, got {len(raters)}")
        self.image_ids: tuple[str, ...] = tuple(image_ids)
        self.raters: tuple[str, ...] = tuple(raters)
        self._images = set(self.image_ids)
        self._lock = threading.Lock()
        self._history: dict[str, dict[str, list[StoredAnnotation]]] = {
            i: {r: [] for r in self.raters} for i in self.image_ids
        }
        self._sr_resolutions: dict[str, bool] = {}
        self._log_path = Path(log_path) if log_path is not None else None
        if self._log_path is not None and self._log_path.exists():
            self._replay(self._log_path.read_text())

    # -- persistence ---------------------------------------------------------

    def _replay(self, text: str) -> None:
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if entry["type"] == "annotation":
                self._apply_annotation(annotation_from_dict(entry["annotation"]))
            elif entry["type"] == "sr_resolution":
                self._sr_resolutions[entry["image_id"]] = bool(entry["keep_sr"])

    def _append_log(self, entry: dict) -> None:
        if self._log_path is None:
            return
        with open(self._log_path, "a") as f:
            f.write(json.dumps(entry, separators=(",", ":")) + "\n")

    # -- writes --------------------------------------------------------------

    def _apply_annotation(self, a: Annotation) -> int:
        versions = self._history[a.image_id][a.rater_id]
        versions.append(StoredAnnotation(annotation=a, version=len(versions) + 1))
        # a new submission invalidates any earlier manual SR resolution
        self._sr_resolutions.pop(a.image_id, None)
        return len(versions)

    def submit(self, a: Annotation) -> int:
        """Store an annotation; returns its version (1-based per image/rater)."""
        if a.image_id not in self._images:
            raise UnknownImage(a.image_id)
        if a.rater_id not in self.raters:
            raise UnknownRater(a.rater_id)
        with self._lock:
            version = self._apply_annotation(a)
            self._append_log({"type": "annotation", "annotation": annotation_to_dict(a)})
        return version

    def resolve_sr(self, image_id: str, keep_sr: bool) -> ConsensusLabel:
        """Record the raters' joint SR decision and return the resulting consensus."""
        if image_id not in self._images:
            raise UnknownImage(image_id)
        current = self.current(image_id)
        if len(current) < 2:
            raise NotReady(f"image {image_id} lacks annotations from both raters")
        a, b = (current[r] for r in self.raters)
        if a.straight_reject == b.straight_reject:
            raise ValidationFailed(f"image {image_id} has no SR disagreement to resolve")
        with self._lock:
            self._sr_resolutions[image_id] = bool(keep_sr)
            self._append_log({"type": "sr_resolution", "image_id": image_id, "keep_sr": bool(keep_sr)})
        return consensus_merge(a, b, sr_resolution=keep_sr)

    # -- reads ----------------------------------------------------------------

    def history(self, image_id: str) -> dict[str, list[StoredAnnotation]]:
        if image_id not in self._images:
            raise UnknownImage(image_id)
        return {r: list(v) for r, v in self._history[image_id].items()}

    def current(self, image_id: str) -> dict[str, Annotation]:
        if image_id not in self._images:
            raise UnknownImage(image_id)
        return {
            r: versions[-1].annotation
            for r, versions in self._history[image_id].items()
            if versions
        }

    def next_image(self, rater_id: str) -> str | None:
        """Lowest-index image this rater has not annotated yet; None when done."""
        if rater_id not in self.raters:
            raise UnknownRater(rater_id)
        for image_id in self.image_ids:
            if not self._history[image_id][rater_id]:
                return image_id
        return None

    def consensus(self, image_id: str) -> ConsensusLabel | None:
        """Consensus for an image, or None while an SR disagreement awaits adjudication."""
        current = self.current(image_id)
        if len(current) < 2:
            raise NotReady(f"image {image_id} has {len(current)} of 2 annotations")
        a, b = (current[r] for r in self.raters)
        resolution = self._sr_resolutions.get(image_id)
        try:
            return consensus_merge(a, b, sr_resolution=resolution)
        except MissingAdjudication:
            return None

    def adjudication_queue(self) -> tuple[str, ...]:
        queue = []
        for image_id in self.image_ids:
            current = self.current(image_id)
            if len(current) < 2 or image_id in self._sr_resolutions:
                continue
            a, b = (current[r] for r in self.raters)
            if a.straight_reject != b.straight_reject:
                queue.append(image_id)
        return tuple(queue)

    def progress(self) -> ProgressSummary:
        per_rater = {}
        for r in self.raters:
            done = sum(1 for i in self.image_ids if self._history[i][r])
            per_rater[r] = {"done": done, "remaining": len(self.image_ids) - done}
        distribution: dict[str, int] = {}
        for image_id in self.image_ids:
            if len(self.current(image_id)) < 2:
                continue
            label = self.consensus(image_id)
            if label is None:
                key = "pending"
            elif label.straight_reject:
                key = "sr"
            else:
                key = f"tier{int(label.tier)}"  # type: ignore[arg-type]
            distribution[key] = distribution.get(key, 0) + 1
        return ProgressSummary(
            per_rater=per_rater,
            adjudication_queue=self.adjudication_queue(),
            consensus_distribution=distribution,
        )

    def export(self) -> list[dict]:
        """One record per fully annotated image; unresolved SR conflicts are flagged."""
        lines = []
        for image_id in self.image_ids:
            current = self.current(image_id)
            if len(current) < 2:
                continue
            label = self.consensus(image_id)
            if label is None:
                lines.append({"image_id": image_id, "pending_adjudication": True})
            else:
                record = consensus_to_dict(label)
                record["pending_adjudication"] = False
                lines.append(record)
        return lines
