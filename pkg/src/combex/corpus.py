"""Annotated-abstract data model, JSONL ingestion and context windowing."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

SEP = "[SEP]"


class Label(str, Enum):
    POS = "POS"
    COMB = "COMB"
    NOCOMB = "NOCOMB"
    NON_POS = "NON_POS"
    ANY_COMB = "ANY_COMB"

    @property
    def token(self) -> str:
        return "@" + self.value.replace("_", "-") + "@"


GOLD_LABELS = frozenset({Label.POS, Label.COMB, Label.NOCOMB})


@dataclass(frozen=True)
class Diagnostic:
    code: str
    position: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = "" if self.position is None else f"@{self.position}"
        return f"{self.code}{where}" + (f": {self.detail}" if self.detail else "")


@dataclass(frozen=True)
class DrugSpan:
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class Relation:
    """A drug combination (indices into the instance's drug list) and its label."""

    drugs: tuple[int, ...]
    label: Label

    @property
    def key(self) -> tuple[frozenset, Label]:
        return frozenset(self.drugs), self.label


@dataclass(frozen=True, eq=False)
class RelationSet:
    """Ordered container of relations compared with set semantics.

    Order is kept because it is the dataset order used for linearization;
    equality and hashing only look at ``{(drug set, label)}``.
    """

    relations: tuple[Relation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))

    def keys(self) -> frozenset:
        return frozenset(r.key for r in self.relations)

    def __eq__(self, other):
        if not isinstance(other, RelationSet):
            return NotImplemented
        return self.keys() == other.keys()

    def __hash__(self):
        return hash(self.keys())

    def __iter__(self):
        return iter(self.relations)

    def __len__(self):
        return len(self.relations)

    def named(self, inst: "Instance") -> frozenset:
        """``{(frozenset of drug names, label)}``; repeated names collapse."""
        return frozenset(
            (frozenset(inst.drugs[i].text for i in r.drugs), r.label) for r in self.relations
        )


@dataclass(frozen=True)
class Instance:
    doc_id: str
    sentences: tuple[str, ...]
    target_index: int  # 1-based
    drugs: tuple[DrugSpan, ...]
    gold: RelationSet = field(default_factory=RelationSet)

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        object.__setattr__(self, "drugs", tuple(self.drugs))

    @property
    def sentence(self) -> str:
        return self.sentences[self.target_index - 1]

    @property
    def drug_names(self) -> list[str]:
        return [d.text for d in self.drugs]

    def entity_names(self) -> list[str]:
        """Distinct drug names in left-to-right span order."""
        seen: dict[str, None] = {}
        for d in sorted(self.drugs, key=lambda d: (d.start, d.end)):
            seen.setdefault(d.text, None)
        return list(seen)


@dataclass(frozen=True)
class WindowConfig:
    n_ctx: int = 0

    def __post_init__(self):
        if self.n_ctx < 0:
            raise ValueError("n_ctx must be non-negative")


def validate_instance(inst: Instance) -> list[Diagnostic]:
    """Check the structural invariants of an annotated instance.

    Returns an empty list when the instance is valid.
    """
    diags: list[Diagnostic] = []
    n = len(inst.sentences)
    if not 1 <= inst.target_index <= n:
        return [Diagnostic("BadTargetIndex", detail=f"target_index {inst.target_index} not in 1..{n}")]
    sent = inst.sentence
    if len(inst.drugs) < 2:
        diags.append(Diagnostic("TooFewDrugs", detail=f"{len(inst.drugs)} drug(s)"))
    for k, d in enumerate(inst.drugs):
        if not 0 <= d.start < d.end <= len(sent):
            diags.append(Diagnostic("SpanOutOfRange", k, f"[{d.start}, {d.end}) in sentence of length {len(sent)}"))
        elif sent[d.start:d.end] != d.text:
            diags.append(Diagnostic("SpanTextMismatch", k, f"{sent[d.start:d.end]!r} != {d.text!r}"))

    rels = inst.gold.relations
    seen_sets: set[frozenset] = set()
    for k, r in enumerate(rels):
        if r.label not in GOLD_LABELS:
            diags.append(Diagnostic("NonGoldLabel", k, r.label.value))
        if any(not 0 <= i < len(inst.drugs) for i in r.drugs):
            diags.append(Diagnostic("DrugIndexOutOfRange", k, str(list(r.drugs))))
        if len(set(r.drugs)) != len(r.drugs):
            diags.append(Diagnostic("DuplicateDrugInCombination", k))
        if len(set(r.drugs)) < 2:
            diags.append(Diagnostic("CombinationTooSmall", k))
        drug_set = frozenset(r.drugs)
        if drug_set in seen_sets:
            diags.append(Diagnostic("DuplicateCombination", k))
        seen_sets.add(drug_set)
    nocomb = [k for k, r in enumerate(rels) if r.label == Label.NOCOMB]
    if nocomb:
        if len(rels) > 1:
            diags.append(Diagnostic("NocombNotSingleton", nocomb[0]))
        elif frozenset(rels[0].drugs) != frozenset(range(len(inst.drugs))):
            diags.append(Diagnostic("NocombNotAllDrugs", nocomb[0]))
    return diags


def window(inst: Instance, cfg: WindowConfig | int = 0) -> str:
    """The target sentence between ``[SEP]`` markers with ``n_ctx`` neighbours each side.

    Context is cut silently at the abstract boundaries.
    """
    n_ctx = cfg.n_ctx if isinstance(cfg, WindowConfig) else int(cfg)
    if n_ctx < 0:
        raise ValueError("n_ctx must be non-negative")
    i = inst.target_index - 1
    left = inst.sentences[max(0, i - n_ctx):i]
    right = inst.sentences[i + 1:i + 1 + n_ctx]
    return " ".join([*left, SEP, inst.sentences[i], SEP, *right])


# -- JSONL ----------------------------------------------------------------

def instance_from_record(rec: dict) -> Instance:
    """Build an instance from a decoded JSONL record (no validation)."""
    for key in ("doc_id", "sentences", "target_index", "drugs", "relations"):
        if key not in rec:
            raise ValueError(f"missing field {key!r}")
    drugs = tuple(DrugSpan(int(d["start"]), int(d["end"]), str(d["text"])) for d in rec["drugs"])
    rels = tuple(Relation(tuple(int(i) for i in r["drug_indices"]), Label(r["label"])) for r in rec["relations"])
    return Instance(
        doc_id=str(rec["doc_id"]),
        sentences=tuple(str(s) for s in rec["sentences"]),
        target_index=int(rec["target_index"]),
        drugs=drugs,
        gold=RelationSet(rels),
    )


def instance_to_record(inst: Instance) -> dict:
    return {
        "doc_id": inst.doc_id,
        "sentences": list(inst.sentences),
        "target_index": inst.target_index,
        "drugs": [{"start": d.start, "end": d.end, "text": d.text} for d in inst.drugs],
        "relations": [{"drug_indices": list(r.drugs), "label": r.label.value} for r in inst.gold],
    }


def load_corpus(path: str | Path, format: str = "jsonl") -> tuple[list[Instance], list[Diagnostic]]:
    """Read and validate a corpus file.

    Returns the accepted instances and one diagnostic per rejected record;
    a diagnostic's ``position`` is the 1-based line number.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    instances: list[Instance] = []
    problems: list[Diagnostic] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                inst = instance_from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(Diagnostic("MalformedRecord", lineno, str(exc)))
                continue
            diags = validate_instance(inst)
            if diags:
                problems.append(Diagnostic("InvalidInstance", lineno, "; ".join(map(str, diags))))
                continue
            instances.append(inst)
    for p in problems:
        logger.warning("%s: line %s: %s", path, p.position, p.detail)
    return instances, problems


def dump_corpus(instances: Iterable[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_record(inst), ensure_ascii=False) + "\n")


def read_lines(path: str | Path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def write_lines(lines: Sequence[str], path: str | Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
