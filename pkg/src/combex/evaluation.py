"""Exact-match precision/recall/F1 for relation sets and drug NER."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from combex.corpus import Instance, Label, RelationSet
from combex.linearizer import Mode, relabel

NamedRelations = frozenset  # {(frozenset[str], Label)}


@dataclass(frozen=True)
class Counts:
    n_pred: int = 0
    n_gold: int = 0
    n_correct: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.n_pred + other.n_pred, self.n_gold + other.n_gold, self.n_correct + other.n_correct)

    @property
    def p(self) -> float:
        return self.n_correct / self.n_pred if self.n_pred else 0.0

    @property
    def r(self) -> float:
        return self.n_correct / self.n_gold if self.n_gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.p, self.r
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {"p": self.p, "r": self.r, "f1": self.f1,
                "n_pred": self.n_pred, "n_gold": self.n_gold, "n_correct": self.n_correct}


@dataclass
class ScoreReport:
    classes: dict[str, Counts] = field(default_factory=dict)

    @property
    def micro(self) -> Counts:
        total = Counts()
        for c in self.classes.values():
            total = total + c
        return total

    def __getitem__(self, name: str | Label) -> Counts:
        key = name.value if isinstance(name, Label) else name
        return self.classes[key]

    def to_dict(self) -> dict:
        out = {name: c.as_dict() for name, c in self.classes.items()}
        out["micro"] = self.micro.as_dict()
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "ScoreReport":
        return cls({k: Counts(v["n_pred"], v["n_gold"], v["n_correct"]) for k, v in data.items() if k != "micro"})


def named_relations(rels, inst: Instance | None = None) -> NamedRelations:
    """Normalize to ``{(frozenset of drug names, label)}``.

    ``RelationSet`` inputs need their instance to resolve drug indices;
    anything else is taken to be an iterable of ``(names, label)`` pairs.
    """
    if isinstance(rels, RelationSet):
        if inst is None:
            raise ValueError("an instance is needed to resolve drug indices")
        return rels.named(inst)
    return frozenset((frozenset(names), Label(label)) for names, label in rels)


def collapse_anycomb(rels):
    """POS and COMB become ANY_COMB; NOCOMB is kept; duplicates merge."""
    if isinstance(rels, RelationSet):
        return relabel(rels, Mode.TWO_WAY_ANY)
    table = {Label.POS: Label.ANY_COMB, Label.COMB: Label.ANY_COMB}
    return frozenset((names, table.get(Label(lab), Label(lab))) for names, lab in rels)


def score_relations(
    preds: Sequence,
    golds: Sequence,
    instances: Sequence[Instance] | None = None,
    classes: Iterable[Label | str] | None = None,
) -> ScoreReport:
    """Micro-summed exact-match counts per label.

    A prediction is correct when a gold relation has the same drug-name set
    and the same label.  Both sides are sets, so each gold relation can be
    matched at most once.
    """
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold instances")
    if instances is not None and len(instances) != len(golds):
        raise ValueError("instances are not aligned with predictions")
    wanted = None if classes is None else {Label(c) for c in classes}
    tallies: dict[Label, list[int]] = {}
    for k, (pred, gold) in enumerate(zip(preds, golds)):
        inst = instances[k] if instances is not None else None
        p = named_relations(pred, inst)
        g = named_relations(gold, inst)
        hit = p & g
        for rel_set, slot in ((p, 0), (g, 1), (hit, 2)):
            for _names, lab in rel_set:
                tallies.setdefault(lab, [0, 0, 0])[slot] += 1
    labels = sorted(set(tallies) | (wanted or set()), key=lambda lab: list(Label).index(lab))
    if wanted is not None:
        labels = [lab for lab in labels if lab in wanted]
    return ScoreReport({lab.value: Counts(*tallies.get(lab, (0, 0, 0))) for lab in labels})


def score_ner(preds: Sequence[Iterable[str]], golds: Sequence[Iterable[str]]) -> ScoreReport:
    """Micro P/R/F1 of exact entity-name matches, reported under ``"NER"``."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold instances")
    total = Counts()
    for p, g in zip(preds, golds):
        p, g = set(p), set(g)
        total = total + Counts(len(p), len(g), len(p & g))
    return ScoreReport({"NER": total})
