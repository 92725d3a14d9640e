"""The 1-10 half-step quality scale and human annotation records.

The shipped scale is a versioned manifest of 28 exemplar images anchoring
the grades; the images themselves live in their public source databases
and are referenced by URI, not redistributed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from urllib.parse import urlparse

from .datasets import FundusRecord, is_on_grid, snap_to_grid

__all__ = [
    "ScaleExemplar",
    "ReferenceScale",
    "AnnotationRecord",
    "Violation",
    "load_scale",
    "save_scale",
    "shipped_scale",
    "validate_scale",
    "validate_annotation",
    "export_labels",
]


@dataclass(frozen=True)
class ScaleExemplar:
    score: float
    image_uri: str
    source: str = ""


@dataclass(frozen=True)
class ReferenceScale:
    exemplars: tuple[ScaleExemplar, ...]
    version: str

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "exemplars": [
                {"score": e.score, "image_uri": e.image_uri, "source": e.source}
                for e in self.exemplars
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceScale":
        return cls(
            exemplars=tuple(
                ScaleExemplar(
                    score=float(e["score"]),
                    image_uri=e["image_uri"],
                    source=e.get("source", ""),
                )
                for e in d["exemplars"]
            ),
            version=str(d["version"]),
        )


@dataclass(frozen=True)
class AnnotationRecord:
    """One grader's half-step score for one image."""

    record_id: str
    image_id: str
    grader_id: str
    score: float
    timestamp: str
    scale_version: str

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_id": self.image_id,
            "grader_id": self.grader_id,
            "score": self.score,
            "timestamp": self.timestamp,
            "scale_version": self.scale_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(
            record_id=str(d["record_id"]),
            image_id=str(d["image_id"]),
            grader_id=str(d["grader_id"]),
            score=float(d["score"]),
            timestamp=str(d["timestamp"]),
            scale_version=str(d["scale_version"]),
        )


@dataclass(frozen=True)
class Violation:
    """A data problem found by validation; violations are data, not faults."""

    kind: str  # grid | range | coverage | uri | version
    message: str


def load_scale(path: str | Path) -> ReferenceScale:
    with open(path, encoding="utf-8") as fh:
        return ReferenceScale.from_dict(json.load(fh))


def save_scale(scale: ReferenceScale, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scale.to_dict(), fh, indent=2)
        fh.write("\n")


def shipped_scale() -> ReferenceScale:
    """The packaged 28-exemplar scale manifest."""
    data = resources.files("fundusq").joinpath("data/reference_scale.json")
    return ReferenceScale.from_dict(json.loads(data.read_text(encoding="utf-8")))


def _is_local_uri(uri: str) -> bool:
    return urlparse(uri).scheme in ("", "file")


def validate_scale(scale: ReferenceScale) -> list[Violation]:
    """Check grid alignment, range, coverage and dangling local image URIs."""
    violations: list[Violation] = []
    if not scale.exemplars:
        violations.append(Violation("coverage", "scale has no exemplars"))
        return violations
    for i, ex in enumerate(scale.exemplars):
        if not 1.0 <= ex.score <= 10.0:
            violations.append(
                Violation("range", f"exemplar {i} score {ex.score} outside [1, 10]")
            )
        elif not is_on_grid(ex.score):
            violations.append(
                Violation("grid", f"exemplar {i} score {ex.score} not on the 0.5 grid")
            )
        if _is_local_uri(ex.image_uri):
            path = Path(urlparse(ex.image_uri).path or ex.image_uri)
            if not path.exists():
                violations.append(
                    Violation("uri", f"exemplar {i} image {ex.image_uri!r} not found")
                )
    scores = [e.score for e in scale.exemplars]
    if min(scores) > 2.0:
        violations.append(
            Violation("coverage", f"lowest exemplar score {min(scores)} is above 2")
        )
    if max(scores) < 9.5:
        violations.append(
            Violation("coverage", f"highest exemplar score {max(scores)} is below 9.5")
        )
    return violations


def validate_annotation(
    rec: AnnotationRecord, scale: ReferenceScale
) -> list[Violation]:
    """Grid/range checks plus scale-version match against the active scale."""
    violations: list[Violation] = []
    if not 1.0 <= rec.score <= 10.0:
        violations.append(
            Violation("range", f"score {rec.score} outside [1, 10]")
        )
    elif not is_on_grid(rec.score):
        violations.append(
            Violation("grid", f"score {rec.score} not on the 0.5 grid")
        )
    if rec.scale_version != scale.version:
        violations.append(
            Violation(
                "version",
                f"annotation used scale {rec.scale_version!r}, active is {scale.version!r}",
            )
        )
    return violations


def export_labels(
    annotations: list[AnnotationRecord],
    *,
    policy: str = "latest",
    image_uri_lookup: dict[str, str] | None = None,
) -> list[FundusRecord]:
    """Resolve annotations to one quality-labeled record per image.

    "latest" keeps the newest score per image (log order breaks timestamp
    ties); "average" takes the mean snapped to the half-step grid, halves
    rounding up. Output is sorted by image id, so an unchanged log exports
    identically every time.
    """
    if policy not in ("latest", "average"):
        raise ValueError(f"unknown policy {policy!r}")
    by_image: dict[str, list[tuple[int, AnnotationRecord]]] = {}
    for pos, rec in enumerate(annotations):
        by_image.setdefault(rec.image_id, []).append((pos, rec))

    records: list[FundusRecord] = []
    for image_id in sorted(by_image):
        entries = by_image[image_id]
        if policy == "latest":
            _, chosen = max(entries, key=lambda e: (e[1].timestamp, e[0]))
            score = chosen.score
        else:
            score = snap_to_grid(
                sum(rec.score for _, rec in entries) / len(entries)
            )
        uri = (image_uri_lookup or {}).get(image_id, image_id)
        records.append(
            FundusRecord(
                id=image_id, image_uri=uri, source="annotation", quality=score
            )
        )
    return records
