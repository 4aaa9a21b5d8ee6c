"""Macro-F1 scoring, per-group breakdowns, and swap-consistency.

Predictions arrive as a CSV (``sample_id,label_index``); a blank or
non-{0,1} label is an abstention.  Abstentions are penalized, not
dropped: they count as a miss for the gold class and earn no credit
anywhere, so a model cannot improve its score by refusing to answer.

A class with zero gold and zero predicted instances contributes F1 = 0 to
the macro average.  That situation cannot arise on a properly balanced
manifest, so the conservative choice only ever surfaces on malformed
inputs, where a loud low score beats a silent perfect one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .curation import DOF_ORDER, PairSample
from .frames import MissingFile, atomic_write_text

__all__ = [
    "EvalError",
    "EmptyOverlap",
    "CoverageMismatch",
    "PredictionSet",
    "ClassStats",
    "GroupScore",
    "EvalReport",
    "macro_f1",
    "consistency_rate",
    "evaluate_run",
    "read_predictions",
    "write_report",
]


class EvalError(Exception):
    """Base class for evaluation failures."""


class EmptyOverlap(EvalError):
    """No prediction refers to any sample of the manifest being scored."""


class CoverageMismatch(EvalError):
    """The two prediction sets of a consistency check cover different ids."""


@dataclass(frozen=True)
class PredictionSet:
    """Mapping from sample id to predicted label index; None = abstention."""

    labels: Mapping[str, int | None]

    def __post_init__(self):
        clean: dict[str, int | None] = {}
        for sid, value in dict(self.labels).items():
            if value is not None and value not in (0, 1):
                raise EvalError(f"prediction for {sid!r} must be 0, 1, or an abstention, got {value}")
            clean[str(sid)] = value
        object.__setattr__(self, "labels", clean)

    def __len__(self) -> int:
        return len(self.labels)

    def get(self, sample_id: str) -> int | None:
        return self.labels.get(sample_id)

    def ids(self) -> set[str]:
        return set(self.labels)


def read_predictions(path: Path) -> PredictionSet:
    """Parse a ``sample_id,label_index`` CSV; blanks and junk abstain."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"prediction file not found: {path}")
    labels: dict[str, int | None] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["sample_id", "label_index"]:
            raise EvalError(f"{path}: expected header 'sample_id,label_index', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            sid = row[0].strip()
            if not sid:
                raise EvalError(f"{path}:{lineno}: empty sample_id")
            if sid in labels:
                raise EvalError(f"{path}:{lineno}: duplicate sample_id {sid!r}")
            raw = row[1].strip() if len(row) > 1 else ""
            labels[sid] = int(raw) if raw in ("0", "1") else None
    return PredictionSet(labels)


def write_predictions(preds: PredictionSet, path: Path) -> Path:
    lines = ["sample_id,label_index"]
    for sid in preds.labels:
        value = preds.labels[sid]
        lines.append(f"{sid},{'' if value is None else value}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
    return Path(path)


@dataclass(frozen=True)
class ClassStats:
    label_index: int
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return (2 * self.tp / denom) if denom else 0.0


@dataclass(frozen=True)
class GroupScore:
    tag: str
    n: int
    abstained: int
    per_class: tuple[ClassStats, ClassStats]

    @property
    def macro_f1(self) -> float:
        return (self.per_class[0].f1 + self.per_class[1].f1) / 2.0


@dataclass(frozen=True)
class EvalReport:
    """Per-group scores plus the sample-weighted average column."""

    groups: tuple[GroupScore, ...]
    scored: int
    abstained: int
    average_macro_f1: float
    consistency_pct: float | None = None

    def to_dict(self) -> dict:
        return {
            "groups": [
                {
                    "tag": g.tag,
                    "n": g.n,
                    "abstained": g.abstained,
                    "macro_f1": g.macro_f1,
                    "per_class": [
                        {
                            "label_index": c.label_index,
                            "tp": c.tp,
                            "fp": c.fp,
                            "tn": c.tn,
                            "fn": c.fn,
                            "f1": c.f1,
                        }
                        for c in g.per_class
                    ],
                }
                for g in self.groups
            ],
            "scored": self.scored,
            "abstained": self.abstained,
            "average_macro_f1": self.average_macro_f1,
            "consistency_pct": self.consistency_pct,
        }

    def format_table(self) -> str:
        header = f"{'group':>10} {'n':>6} {'abstain':>8} {'macro-F1':>9}"
        lines = [header, "-" * len(header)]
        for g in self.groups:
            lines.append(f"{g.tag:>10} {g.n:>6d} {g.abstained:>8d} {g.macro_f1:>9.4f}")
        lines.append("-" * len(header))
        lines.append(f"{'average':>10} {self.scored:>6d} {self.abstained:>8d} {self.average_macro_f1:>9.4f}")
        if self.consistency_pct is not None:
            lines.append(f"swap consistency: {self.consistency_pct:.1f}%")
        return "\n".join(lines)


def write_report(report: EvalReport, path: Path) -> Path:
    atomic_write_text(Path(path), json.dumps(report.to_dict(), indent=2) + "\n")
    return Path(path)


def _gold_map(gold: Sequence[PairSample]) -> dict[str, PairSample]:
    out: dict[str, PairSample] = {}
    for s in gold:
        if s.sample_id in out:
            raise EvalError(f"duplicate sample_id {s.sample_id!r} in gold manifest")
        out[s.sample_id] = s
    return out


def _check_ids(preds: PredictionSet, gold_ids: set[str]) -> None:
    unknown = preds.ids() - gold_ids
    if unknown:
        some = ", ".join(sorted(unknown)[:3])
        raise EvalError(f"{len(unknown)} predicted ids not in the manifest (e.g. {some})")


def _confusion(gold: Mapping[str, int], preds: PredictionSet) -> tuple[ClassStats, ClassStats]:
    stats = []
    for cls in (0, 1):
        tp = fp = tn = fn = 0
        for sid, g in gold.items():
            p = preds.get(sid)
            if p == cls:
                if g == cls:
                    tp += 1
                else:
                    fp += 1
            else:
                # Abstentions land here: a miss for the gold class, no
                # credit for the other one.
                if g == cls:
                    fn += 1
                else:
                    tn += 1
        stats.append(ClassStats(cls, tp, fp, tn, fn))
    return stats[0], stats[1]


def macro_f1(preds: PredictionSet, gold: Sequence[PairSample]) -> float:
    """Unweighted mean of the two per-class F1 scores.

    Gold samples absent from the prediction set count as abstentions.

    Raises:
        EmptyOverlap: the prediction set touches none of the gold ids.
    """
    gold_by_id = _gold_map(gold)
    if not (preds.ids() & set(gold_by_id)):
        raise EmptyOverlap("no prediction refers to a gold sample")
    _check_ids(preds, set(gold_by_id))
    c0, c1 = _confusion({sid: s.label_index for sid, s in gold_by_id.items()}, preds)
    return (c0.f1 + c1.f1) / 2.0


def consistency_rate(
    original: PredictionSet, swapped: PredictionSet, manifest: Sequence[PairSample]
) -> float:
    """Percentage of samples answered with the logical opposite after a swap.

    Correctness is irrelevant; only ``swapped == 1 - original`` counts.
    An abstention on either side cannot be a logical opposite.

    Raises:
        CoverageMismatch: the two sets do not cover the manifest identically.
    """
    ids = [s.sample_id for s in manifest]
    if not ids:
        raise EmptyOverlap("manifest is empty")
    missing = [sid for sid in ids if sid not in original.labels or sid not in swapped.labels]
    if missing or original.ids() != swapped.ids():
        raise CoverageMismatch(
            f"prediction sets must cover the same ids ({len(missing)} manifest ids missing)"
        )
    hits = 0
    for sid in ids:
        a, b = original.get(sid), swapped.get(sid)
        if a is not None and b is not None and b == 1 - a:
            hits += 1
    return 100.0 * hits / len(ids)


def _group_order_key(tag: str):
    if tag in DOF_ORDER:
        return (1, DOF_ORDER.index(tag), tag)
    try:
        return (0, float(tag), tag)
    except ValueError:
        return (2, 0.0, tag)


def evaluate_run(
    gold: Sequence[PairSample],
    preds: PredictionSet,
    swapped_preds: PredictionSet | None = None,
) -> EvalReport:
    """Per-group macro-F1 breakdown with the sample-weighted average.

    Groups are angle bins for bench manifests and DoF names for diag
    manifests.  The average column weights each group by its sample count,
    which equals pooling when groups are equally sized.
    """
    gold_by_id = _gold_map(gold)
    if not (preds.ids() & set(gold_by_id)):
        raise EmptyOverlap("no prediction refers to a gold sample")
    _check_ids(preds, set(gold_by_id))
    tags = sorted({s.tag for s in gold_by_id.values()}, key=_group_order_key)
    groups = []
    total_abstained = 0
    for tag in tags:
        members = {sid: s.label_index for sid, s in gold_by_id.items() if s.tag == tag}
        abstained = sum(1 for sid in members if preds.get(sid) is None)
        total_abstained += abstained
        c0, c1 = _confusion(members, preds)
        groups.append(GroupScore(tag=tag, n=len(members), abstained=abstained, per_class=(c0, c1)))
    scored = sum(g.n for g in groups)
    average = sum(g.macro_f1 * g.n for g in groups) / scored if scored else 0.0
    consistency = None
    if swapped_preds is not None:
        consistency = consistency_rate(preds, swapped_preds, list(gold))
    return EvalReport(
        groups=tuple(groups),
        scored=scored,
        abstained=total_abstained,
        average_macro_f1=average,
        consistency_pct=consistency,
    )
