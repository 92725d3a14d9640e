"""Manifest-based catalog of fundus images and labels.

A manifest is a line-oriented JSON file: one header object on the first
line, then one record object per line. Records carry a continuous quality
score in [1, 10], an optional trinary or binary label, and an optional
split assignment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import IdCollision, InsufficientData, ParseError, ValidationError

__all__ = [
    "TrinaryLabel",
    "BinaryLabel",
    "FundusRecord",
    "DatasetManifest",
    "SplitSpec",
    "SPLIT_NAMES",
    "MANIFEST_VERSION",
    "is_on_grid",
    "snap_to_grid",
    "load_manifest",
    "save_manifest",
    "bin_score",
    "stratified_split",
    "merge_pseudo",
]

MANIFEST_VERSION = 1
SPLIT_NAMES = ("train", "validation", "test")

SCORE_MIN = 1.0
SCORE_MAX = 10.0


class TrinaryLabel(str, Enum):
    GOOD = "Good"
    USABLE = "Usable"
    REJECT = "Reject"


class BinaryLabel(str, Enum):
    GOOD = "Good"
    POOR = "Poor"


def is_on_grid(value: float) -> bool:
    """True when a score lies on the half-step annotation grid."""
    return abs(value * 2 - round(value * 2)) < 1e-9


def snap_to_grid(value: float) -> float:
    """Round to the nearest half step, halves rounding up."""
    snapped = math.floor(value * 2.0 + 0.5) / 2.0
    return min(max(snapped, SCORE_MIN), SCORE_MAX)


@dataclass
class FundusRecord:
    """One image entry: identity, location and whatever labels it has."""

    id: str
    image_uri: str
    source: str = ""
    quality: float | None = None
    trinary: TrinaryLabel | None = None
    binary: BinaryLabel | None = None
    pseudo: bool = False

    def validate(self) -> None:
        if not self.id:
            raise ValidationError("record id must be non-empty", self.id)
        if not self.image_uri:
            raise ValidationError(f"record {self.id!r} has no image_uri", self.id)
        if self.quality is not None and not SCORE_MIN <= self.quality <= SCORE_MAX:
            raise ValidationError(
                f"record {self.id!r} quality {self.quality} outside [1, 10]", self.id
            )
        if self.pseudo and self.quality is None:
            raise ValidationError(
                f"record {self.id!r} is pseudo-labeled but has no quality score",
                self.id,
            )


@dataclass
class DatasetManifest:
    """Immutable-by-convention collection of records plus split assignments."""

    records: list[FundusRecord] = field(default_factory=list)
    split_assignment: dict[str, str] = field(default_factory=dict)
    source: str = ""
    created: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> set[str]:
        return {r.id for r in self.records}

    def record(self, record_id: str) -> FundusRecord:
        for r in self.records:
            if r.id == record_id:
                return r
        raise KeyError(record_id)

    def split_records(self, split: str) -> list[FundusRecord]:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return [r for r in self.records if self.split_assignment.get(r.id) == split]

    def split_sizes(self) -> dict[str, int]:
        sizes = {name: 0 for name in SPLIT_NAMES}
        for s in self.split_assignment.values():
            sizes[s] += 1
        return sizes

    def validate(self) -> None:
        seen: set[str] = set()
        for r in self.records:
            r.validate()
            if r.id in seen:
                raise ValidationError(f"duplicate record id {r.id!r}", r.id)
            seen.add(r.id)
        for rid, split in self.split_assignment.items():
            if rid not in seen:
                raise ValidationError(
                    f"split assignment references unknown id {rid!r}", rid
                )
            if split not in SPLIT_NAMES:
                raise ValidationError(
                    f"record {rid!r} assigned to unknown split {split!r}", rid
                )


@dataclass
class SplitSpec:
    """Requested split sizes, as exact counts or as fractions summing to 1."""

    counts: tuple[int, int, int] | None = None
    fractions: tuple[float, float, float] | None = None
    stratify: bool = True
    bin_width: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if (self.counts is None) == (self.fractions is None):
            raise ValueError("give exactly one of counts or fractions")
        if self.counts is not None and any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        if self.fractions is not None:
            if any(f < 0 for f in self.fractions):
                raise ValueError("fractions must be non-negative")
            if abs(sum(self.fractions) - 1.0) > 1e-9:
                raise ValueError("fractions must sum to 1")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")


# --- manifest file I/O -------------------------------------------------------


def _record_from_obj(obj: dict, line_no: int) -> tuple[FundusRecord, str | None]:
    known = {"id", "image_uri", "source", "quality", "trinary", "binary", "pseudo", "split"}
    unknown = set(obj) - known
    if unknown:
        raise ValidationError(
            f"line {line_no}: unknown record keys {sorted(unknown)}", obj.get("id")
        )
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise ValidationError(f"line {line_no}: missing or invalid id", None)
    try:
        trinary = TrinaryLabel(obj["trinary"]) if "trinary" in obj else None
        binary = BinaryLabel(obj["binary"]) if "binary" in obj else None
    except ValueError as e:
        raise ValidationError(f"line {line_no}: {e}", rid) from e
    quality = obj.get("quality")
    if quality is not None and not isinstance(quality, (int, float)):
        raise ValidationError(f"line {line_no}: quality must be numeric", rid)
    rec = FundusRecord(
        id=rid,
        image_uri=obj.get("image_uri", ""),
        source=obj.get("source", ""),
        quality=float(quality) if quality is not None else None,
        trinary=trinary,
        binary=binary,
        pseudo=bool(obj.get("pseudo", False)),
    )
    split = obj.get("split")
    if split is not None and split not in SPLIT_NAMES:
        raise ValidationError(f"line {line_no}: unknown split {split!r}", rid)
    return rec, split


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read and fully validate a manifest file.

    Raises:
        ParseError: the file is not valid line-oriented JSON with a header.
        ValidationError: a record violates an invariant (names the record id).
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in (line.strip() for line in fh) if ln]
    if not lines:
        raise ParseError(f"{path}: empty manifest file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: bad header line: {e}") from e
    if not isinstance(header, dict) or "version" not in header:
        raise ParseError(f"{path}: first line must be a header object with a version")
    if header["version"] != MANIFEST_VERSION:
        raise ParseError(f"{path}: unsupported manifest version {header['version']!r}")

    records: list[FundusRecord] = []
    assignment: dict[str, str] = {}
    for i, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: line {i}: {e}") from e
        if not isinstance(obj, dict):
            raise ParseError(f"{path}: line {i}: record must be an object")
        rec, split = _record_from_obj(obj, i)
        records.append(rec)
        if split is not None:
            assignment[rec.id] = split

    manifest = DatasetManifest(
        records=records,
        split_assignment=assignment,
        source=str(header.get("source", "")),
        created=str(header.get("created", "")),
    )
    manifest.validate()
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest in the line-oriented JSON format."""
    path = Path(path)
    header = {
        "version": MANIFEST_VERSION,
        "source": manifest.source,
        "created": manifest.created or datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in manifest.records:
            obj: dict = {"id": r.id, "image_uri": r.image_uri, "source": r.source}
            if r.quality is not None:
                obj["quality"] = r.quality
            if r.trinary is not None:
                obj["trinary"] = r.trinary.value
            if r.binary is not None:
                obj["binary"] = r.binary.value
            if r.pseudo:
                obj["pseudo"] = True
            split = manifest.split_assignment.get(r.id)
            if split is not None:
                obj["split"] = split
            fh.write(json.dumps(obj) + "\n")


# --- score binning and stratified splitting ---------------------------------


def bin_score(value: float, bin_width: float = 0.5) -> int:
    """Map a score to its stratification bin: floor((value - 1) / bin_width).

    The maximum score 10.0 lands in the last (closed) bin. With the default
    half-step width the grid scores 1.0 .. 10.0 occupy 19 bins.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    return int(math.floor((value - SCORE_MIN) / bin_width))


def _apportion(total: int, fractions: list[float], tie_rank: list[int]) -> list[int]:
    """Largest-remainder rounding of total*fractions to integers summing to total."""
    ideals = [total * f for f in fractions]
    floors = [int(math.floor(x)) for x in ideals]
    leftover = total - sum(floors)
    order = sorted(
        range(len(fractions)),
        key=lambda s: (-(ideals[s] - floors[s]), tie_rank[s]),
    )
    out = floors[:]
    for s in order[:leftover]:
        out[s] += 1
    return out


def _assign_bumps(
    floors: list[list[int]],
    fracs: list[list[float]],
    bump_count: list[int],
    need: list[int],
    prefer: list[list[int]],
) -> list[set[int]]:
    """Choose which splits get the +1 in each bin.

    Each bin must hand out ``bump_count[b]`` bumps, each split must collect
    exactly ``need[s]`` in total, and a split can only be bumped in a bin
    where its allocation has a fractional part. A feasible choice always
    exists (the fractional allocation itself is a valid flow); tentative
    largest-remainder picks are repaired with augmenting moves.
    """
    n_bins = len(floors)
    n_splits = len(need)
    bumps: list[set[int]] = [set() for _ in range(n_bins)]
    got = [0] * n_splits

    def place(b: int, visited: set[int]) -> bool:
        # Try to add one bump to bin b, displacing other bins if necessary.
        candidates = [s for s in prefer[b] if s not in bumps[b] and fracs[b][s] > 1e-12]
        for s in candidates:
            if got[s] < need[s]:
                bumps[b].add(s)
                got[s] += 1
                return True
        for s in candidates:
            for b2 in range(n_bins):
                if b2 == b or b2 in visited or s not in bumps[b2]:
                    continue
                bumps[b2].discard(s)
                if place(b2, visited | {b}):
                    bumps[b].add(s)
                    return True
                bumps[b2].add(s)
        return False

    for b in range(n_bins):
        for _ in range(bump_count[b]):
            if not place(b, {b}):
                raise RuntimeError("internal error: bump assignment infeasible")
    return bumps


def stratified_split(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """Assign every record to train/validation/test, stratified by score bin.

    Each bin's records are allocated to the splits in the requested
    proportions using largest-remainder rounding, so every bin deviates from
    its ideal allocation by less than one record while total split sizes
    match the spec exactly. Deterministic under ``spec.seed``.

    Raises:
        InsufficientData: requested counts exceed the manifest size.
        ValidationError: stratification requested but a record has no score.
    """
    records = manifest.records
    n = len(records)
    if spec.counts is not None:
        counts = list(spec.counts)
        if sum(counts) > n:
            raise InsufficientData(
                f"requested {sum(counts)} records but manifest has {n}"
            )
        if sum(counts) < n:
            raise ValueError(
                f"counts sum to {sum(counts)} but manifest has {n} records"
            )
    else:
        rng0 = np.random.default_rng(spec.seed)
        tie = list(rng0.permutation(len(SPLIT_NAMES)))
        counts = _apportion(n, list(spec.fractions), tie)
    if n == 0:
        raise InsufficientData("manifest is empty")

    fractions = [c / n for c in counts]

    # Group record indices by stratification bin.
    if spec.stratify:
        by_bin: dict[int, list[int]] = {}
        for i, r in enumerate(records):
            if r.quality is None:
                raise ValidationError(
                    f"record {r.id!r} has no quality score; cannot stratify", r.id
                )
            by_bin.setdefault(bin_score(r.quality, spec.bin_width), []).append(i)
        bin_keys = sorted(by_bin)
    else:
        by_bin = {0: list(range(n))}
        bin_keys = [0]

    rng = np.random.default_rng(spec.seed)
    tie_rank = [int(x) for x in rng.permutation(len(SPLIT_NAMES))]

    floors: list[list[int]] = []
    fracs: list[list[float]] = []
    bump_count: list[int] = []
    prefer: list[list[int]] = []
    for key in bin_keys:
        n_b = len(by_bin[key])
        ideal = [n_b * f for f in fractions]
        fl = [int(math.floor(x)) for x in ideal]
        fr = [ideal[s] - fl[s] for s in range(len(fractions))]
        floors.append(fl)
        fracs.append(fr)
        bump_count.append(n_b - sum(fl))
        prefer.append(
            sorted(range(len(fractions)), key=lambda s: (-fr[s], tie_rank[s]))
        )
    need = [counts[s] - sum(fl[s] for fl in floors) for s in range(len(counts))]
    bumps = _assign_bumps(floors, fracs, bump_count, need, prefer)

    assignment: dict[str, str] = {}
    for bi, key in enumerate(bin_keys):
        alloc = [floors[bi][s] + (1 if s in bumps[bi] else 0) for s in range(len(counts))]
        idxs = by_bin[key]
        ids_sorted = sorted(records[i].id for i in idxs)
        order = rng.permutation(len(ids_sorted))
        shuffled = [ids_sorted[int(j)] for j in order]
        pos = 0
        for s, name in enumerate(SPLIT_NAMES):
            for rid in shuffled[pos : pos + alloc[s]]:
                assignment[rid] = name
            pos += alloc[s]

    return DatasetManifest(
        records=list(records),
        split_assignment=assignment,
        source=manifest.source,
        created=manifest.created,
    )


def merge_pseudo(
    labeled: DatasetManifest,
    pseudo: DatasetManifest,
    *,
    validation_fraction: float | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Union a labeled manifest with teacher-generated pseudo records.

    By default pseudo records go to the train split only and labeled records
    keep their assignments. Passing ``validation_fraction`` instead re-draws
    train/validation over all non-test records (labeled and pseudo alike),
    which reproduces the published stage-III split arithmetic; the test
    split is never touched in either mode.

    Raises:
        IdCollision: the two manifests share a record id.
        ValidationError: a pseudo record lacks quality or the pseudo flag.
    """
    if not pseudo.records:
        return labeled

    labeled_ids = labeled.ids()
    for r in pseudo.records:
        if r.id in labeled_ids:
            raise IdCollision(f"record id {r.id!r} present in both manifests")
        if not r.pseudo or r.quality is None:
            raise ValidationError(
                f"record {r.id!r} must be pseudo=true with a quality score", r.id
            )

    records = list(labeled.records) + list(pseudo.records)
    assignment = dict(labeled.split_assignment)
    for r in pseudo.records:
        assignment[r.id] = "train"

    if validation_fraction is not None:
        if not 0.0 <= validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        pool = sorted(
            rid for rid, split in assignment.items() if split != "test"
        )
        rng = np.random.default_rng(seed)
        tie = [int(x) for x in rng.permutation(2)]
        n_train, n_val = _apportion(
            len(pool), [1.0 - validation_fraction, validation_fraction], tie
        )
        order = rng.permutation(len(pool))
        shuffled = [pool[int(j)] for j in order]
        for rid in shuffled[:n_train]:
            assignment[rid] = "train"
        for rid in shuffled[n_train:]:
            assignment[rid] = "validation"

    merged = DatasetManifest(
        records=records,
        split_assignment=assignment,
        source=labeled.source,
        created=labeled.created,
    )
    merged.validate()
    return merged
