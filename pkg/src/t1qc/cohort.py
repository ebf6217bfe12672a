"""Catalog parsing, attribute-based cohort selection, and the gadolinium keyword audit.

The catalog is an exported table of scanner metadata (one row per image);
selection works purely on those attributes, never on pixel data.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .model import ConsensusLabel, ImageRecord, ValidationFailed


class CatalogError(ValueError):
    """Base class for catalog parsing failures."""


class EmptyCatalog(CatalogError):
    """No data rows were found."""


class DuplicateImageId(CatalogError):
    """The same image_id appears on more than one row."""


class MalformedRow(CatalogError):
    """Raised only when every row fails to parse; otherwise rows are reported."""


class UnknownImageId(KeyError):
    """A label refers to an image_id absent from the catalog."""


# The attribute values quoted as 3D-T1w examples in the source metadata;
# deployments extend this list with their own site-specific values.
DEFAULT_T1W_PATTERNS = (
    "t1 eg 3d mpr",
    "sag 3d bravo",
    "3d t1 eg mprage",
    "irm cranio",
    "brain t1w/ffegado",
)

DEFAULT_GADOLINIUM_MARKERS = ("gado", "inj", "iv")


@dataclass(frozen=True)
class KeywordRules:
    """Case-insensitive substring patterns for T1w selection and gadolinium markers."""

    t1w_patterns: tuple[str, ...] = DEFAULT_T1W_PATTERNS
    gadolinium_markers: tuple[str, ...] = DEFAULT_GADOLINIUM_MARKERS

    def __post_init__(self) -> None:
        if not self.t1w_patterns or not self.gadolinium_markers:
            raise ValidationFailed("pattern lists must be non-empty")
        object.__setattr__(self, "t1w_patterns", tuple(p.lower() for p in self.t1w_patterns))
        object.__setattr__(self, "gadolinium_markers", tuple(p.lower() for p in self.gadolinium_markers))


@dataclass(frozen=True)
class RowError:
    line_number: int
    message: str


@dataclass(frozen=True)
class Catalog:
    """Parsed metadata catalog; rows that failed coercion are kept as errors."""

    records: tuple[ImageRecord, ...]
    source: str = "<memory>"
    row_count: int = 0
    row_errors: tuple[RowError, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for r in self.records:
            if r.image_id in seen:
                raise DuplicateImageId(f"image_id {r.image_id!r} appears more than once")
            seen.add(r.image_id)

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.image_id: r for r in self.records}


_FIELDS = (
    "image_id",
    "patient_id",
    "series_description",
    "study_description",
    "body_part_examined",
    "n_slices",
    "manufacturer",
    "model_name",
    "field_strength_tesla",
)


def _coerce_record(row: Mapping[str, object]) -> ImageRecord:
    def text(key: str) -> str:
        value = row.get(key, "")
        return "" if value is None else str(value)

    raw_fs = row.get("field_strength_tesla")
    if raw_fs is None or str(raw_fs).strip() in ("", "unknown", "NA", "n/a"):
        field_strength = None
    else:
        field_strength = float(raw_fs)
    return ImageRecord(
        image_id=text("image_id"),
        patient_id=text("patient_id"),
        series_description=text("series_description"),
        study_description=text("study_description"),
        body_part_examined=text("body_part_examined"),
        n_slices=int(str(row.get("n_slices", "")).strip()),
        manufacturer=text("manufacturer"),
        model_name=text("model_name"),
        field_strength_tesla=field_strength,
    )


def parse_catalog(text: str, format: str = "csv", source: str = "<memory>") -> Catalog:
    """Parse a CSV (header row) or JSON-lines catalog into ImageRecords.

    Rows that fail type coercion are collected with their line numbers in
    ``row_errors`` instead of aborting the parse; the parse only fails
    outright when no row survives.
    """
    rows: list[tuple[int, Mapping[str, object]]] = []
    if format == "csv":
        reader = csv.DictReader(io.StringIO(text))
        for i, row in enumerate(reader):
            rows.append((i + 2, row))  # +2: header is line 1
    elif format in ("jsonl", "json-lines"):
        for i, line in enumerate(text.splitlines()):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append((i + 1, json.loads(line)))
            except json.JSONDecodeError as e:
                rows.append((i + 1, {"__parse_error__": str(e)}))
    else:
        raise ValueError(f"unsupported catalog format {format!r}")

    if not rows:
        raise EmptyCatalog(f"{source}: no data rows")

    records: list[ImageRecord] = []
    errors: list[RowError] = []
    for line_number, row in rows:
        if "__parse_error__" in row:
            errors.append(RowError(line_number, f"invalid JSON: {row['__parse_error__']}"))
            continue
        try:
            records.append(_coerce_record(row))
        except (ValueError, TypeError, KeyError) as e:
            errors.append(RowError(line_number, str(e)))

    if not records:
        raise MalformedRow(f"{source}: all {len(rows)} rows failed to parse; first: {errors[0].message}")
    return Catalog(
        records=tuple(records), source=source, row_count=len(rows), row_errors=tuple(errors)
    )


def catalog_to_csv(c: Catalog) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_FIELDS, quoting=csv.QUOTE_MINIMAL)
    writer.writeheader()
    for r in c.records:
        writer.writerow(
            {
                "image_id": r.image_id,
                "patient_id": r.patient_id,
                "series_description": r.series_description,
                "study_description": r.study_description,
                "body_part_examined": r.body_part_examined,
                "n_slices": r.n_slices,
                "manufacturer": r.manufacturer,
                "model_name": r.model_name,
                "field_strength_tesla": "" if r.field_strength_tesla is None else r.field_strength_tesla,
            }
        )
    return buf.getvalue()


def _matches_any(value: str, patterns: Sequence[str]) -> bool:
    lowered = value.lower()
    return any(p in lowered for p in patterns)


def select_t1w(c: Catalog, rules: KeywordRules | None = None) -> Catalog:
    """Keep records whose description attributes match any T1w pattern."""
    rules = rules or KeywordRules()
    kept = tuple(
        r
        for r in c.records
        if _matches_any(r.series_description, rules.t1w_patterns)
        or _matches_any(r.study_description, rules.t1w_patterns)
        or _matches_any(r.body_part_examined, rules.t1w_patterns)
    )
    return Catalog(records=kept, source=c.source, row_count=c.row_count, row_errors=c.row_errors)


def filter_min_slices(c: Catalog, min_slices: int = 40) -> Catalog:
    """Drop records with fewer than ``min_slices`` slices (2D exports mislabeled 3D)."""
    kept = tuple(r for r in c.records if r.n_slices >= min_slices)
    return Catalog(records=kept, source=c.source, row_count=c.row_count, row_errors=c.row_errors)


@dataclass(frozen=True)
class GadoAudit:
    """2x2 contingency of manual gadolinium labels vs keyword flags.

    Keyword matching is by substring, so embedded markers ("FFEGADO") count;
    the short marker "iv" will also fire inside unrelated words, which is
    acceptable on a catalog already narrowed to brain T1w.
    """

    manual_yes_keyword_yes: int
    manual_yes_keyword_no: int
    manual_no_keyword_yes: int
    manual_no_keyword_no: int
    per_image: tuple[tuple[str, bool, bool], ...]  # (image_id, manual, keyword)

    @property
    def total(self) -> int:
        return (
            self.manual_yes_keyword_yes
            + self.manual_yes_keyword_no
            + self.manual_no_keyword_yes
            + self.manual_no_keyword_no
        )

    def to_dict(self) -> dict:
        return {
            "table": {
                "manual_yes_keyword_yes": self.manual_yes_keyword_yes,
                "manual_yes_keyword_no": self.manual_yes_keyword_no,
                "manual_no_keyword_yes": self.manual_no_keyword_yes,
                "manual_no_keyword_no": self.manual_no_keyword_no,
            },
            "total": self.total,
            "note": "keyword flag = any marker substring in series or study description (case-insensitive)",
            "per_image": [
                {"image_id": i, "manual": m, "keyword": k} for i, m, k in self.per_image
            ],
        }


def keyword_gadolinium_flag(record: ImageRecord, rules: KeywordRules | None = None) -> bool:
    """True if any gadolinium marker appears in the series or study description."""
    rules = rules or KeywordRules()
    return _matches_any(record.series_description, rules.gadolinium_markers) or _matches_any(
        record.study_description, rules.gadolinium_markers
    )


def audit_gadolinium_keywords(
    c: Catalog, labels: Iterable[ConsensusLabel], rules: KeywordRules | None = None
) -> GadoAudit:
    """Cross-tabulate manual gadolinium labels against DICOM keyword flags.

    Straight-rejected labels carry no gadolinium judgment and are skipped, so
    the four cells sum to the number of labeled non-SR images supplied.
    """
    rules = rules or KeywordRules()
    index = c.by_id()
    cells = {(True, True): 0, (True, False): 0, (False, True): 0, (False, False): 0}
    per_image: list[tuple[str, bool, bool]] = []
    for label in labels:
        record = index.get(label.image_id)
        if record is None:
            raise UnknownImageId(f"label for unknown image {label.image_id!r}")
        if label.straight_reject:
            continue
        manual = bool(label.gadolinium)
        keyword = keyword_gadolinium_flag(record, rules)
        cells[(manual, keyword)] += 1
        per_image.append((label.image_id, manual, keyword))
    return GadoAudit(
        manual_yes_keyword_yes=cells[(True, True)],
        manual_yes_keyword_no=cells[(True, False)],
        manual_no_keyword_yes=cells[(False, True)],
        manual_no_keyword_no=cells[(False, False)],
        per_image=tuple(per_image),
    )
