"""Relation sets <-> linearized token sequences.

Flat schemas write each combination as ``drug SEP drug SEP ... LABEL``.
The NER-extended schema first lists every drug name separated by ``;``,
then ``@NER@``, then the POS/COMB combinations as ``drug ; drug LABEL``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from combex.corpus import Diagnostic, Instance, Label, Relation, RelationSet
from combex.tokenizer import DRUG, EOS, NER, SEMI, Token, special, surfaces, tokenize


class Mode(str, Enum):
    THREE_WAY = "three_way"
    TWO_WAY_POS = "two_way_pos"
    TWO_WAY_ANY = "two_way_any"
    NER_EXTENDED = "ner_extended"


class Separator(str, Enum):
    AT_DRUG = "drug"
    SEMICOLON = "semicolon"

    @property
    def token(self) -> str:
        return DRUG if self is Separator.AT_DRUG else SEMI


class Ordering(str, Enum):
    DATASET_ORDER = "dataset"
    LEFT_TO_RIGHT = "left_to_right"


_MODE_LABELS = {
    Mode.THREE_WAY: (Label.POS, Label.COMB, Label.NOCOMB),
    Mode.TWO_WAY_POS: (Label.POS, Label.NON_POS),
    Mode.TWO_WAY_ANY: (Label.ANY_COMB, Label.NOCOMB),
    # NOCOMB is implicit under the NER schema: nothing follows @NER@.
    Mode.NER_EXTENDED: (Label.POS, Label.COMB, Label.NOCOMB),
}

_RELABEL = {
    Mode.TWO_WAY_POS: {Label.POS: Label.POS, Label.COMB: Label.NON_POS, Label.NOCOMB: Label.NON_POS},
    Mode.TWO_WAY_ANY: {Label.POS: Label.ANY_COMB, Label.COMB: Label.ANY_COMB, Label.NOCOMB: Label.NOCOMB},
}


@dataclass(frozen=True)
class Schema:
    mode: Mode = Mode.THREE_WAY
    entity_sep: Separator = Separator.AT_DRUG
    ordering: Ordering = Ordering.DATASET_ORDER

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "entity_sep", Separator(self.entity_sep))
        object.__setattr__(self, "ordering", Ordering(self.ordering))
        if self.mode is Mode.NER_EXTENDED:
            object.__setattr__(self, "entity_sep", Separator.SEMICOLON)

    @property
    def labels(self) -> tuple[Label, ...]:
        return _MODE_LABELS[self.mode]

    @property
    def sep(self) -> str:
        return self.entity_sep.token

    @property
    def label_tokens(self) -> dict[str, Label]:
        """Label tokens that may appear in output, mapped to their labels."""
        labels = self.labels
        if self.mode is Mode.NER_EXTENDED:
            labels = (Label.POS, Label.COMB)
        return {lab.token: lab for lab in labels}

    @property
    def specials(self) -> tuple[str, ...]:
        """Structural output tokens other than EOS."""
        extra = (NER,) if self.mode is Mode.NER_EXTENDED else ()
        return (self.sep, *self.label_tokens, *extra)


def relabel(rels: RelationSet, mode: Mode) -> RelationSet:
    """Map gold labels into the label space of ``mode``, merging duplicates."""
    table = _RELABEL.get(Mode(mode))
    if table is None:
        return rels
    out: dict[tuple, Relation] = {}
    for r in rels:
        new = Relation(r.drugs, table.get(r.label, r.label))
        out.setdefault(new.key, new)
    return RelationSet(tuple(out.values()))


def _span_key(inst: Instance, i: int) -> tuple[int, int]:
    if not 0 <= i < len(inst.drugs):
        raise ValueError(f"drug index {i} has no span in instance {inst.doc_id!r}")
    d = inst.drugs[i]
    return d.start, d.end


def order_combinations(rels: RelationSet, inst: Instance, policy: Ordering) -> list[Relation]:
    """Relations in emission order.

    ``LEFT_TO_RIGHT`` sorts drugs inside each combination by span position
    and then compares combinations as lists of span positions, so a proper
    prefix comes first.
    """
    if Ordering(policy) is Ordering.DATASET_ORDER:
        return list(rels.relations)
    keyed = []
    for r in rels:
        drugs = tuple(sorted(r.drugs, key=lambda i: _span_key(inst, i)))
        keyed.append(([_span_key(inst, i) for i in drugs], r.label.value, Relation(drugs, r.label)))
    keyed.sort(key=lambda x: (x[0], x[1]))
    return [r for _, _, r in keyed]


def _combination_tokens(inst: Instance, drugs: Sequence[int], sep: str, trailing: bool) -> list[Token]:
    # Repeated names inside one combination are written once.
    names = list(dict.fromkeys(inst.drugs[i].text for i in drugs))
    out: list[Token] = []
    for k, name in enumerate(names):
        if k and not trailing:
            out.append(special(sep))
        out.extend(tokenize(name))
        if trailing:
            out.append(special(sep))
    return out


def linearize(rels: RelationSet, inst: Instance, schema: Schema) -> list[Token]:
    """Token sequence (ending in EOS) for ``rels`` under ``schema``."""
    allowed = set(schema.labels)
    for r in rels:
        if r.label not in allowed:
            raise ValueError(f"label {r.label.value} is not valid for schema mode {schema.mode.value}; relabel first")
    ordered = order_combinations(rels, inst, schema.ordering)
    out: list[Token] = []
    if schema.mode is Mode.NER_EXTENDED:
        for k, name in enumerate(inst.entity_names()):
            if k:
                out.append(special(SEMI))
            out.extend(tokenize(name))
        out.append(special(NER))
        for r in ordered:
            if r.label is Label.NOCOMB:
                continue
            out.extend(_combination_tokens(inst, r.drugs, SEMI, trailing=False))
            out.append(special(r.label.token))
    else:
        for r in ordered:
            out.extend(_combination_tokens(inst, r.drugs, schema.sep, trailing=True))
            out.append(special(r.label.token))
    out.append(special(EOS))
    return out


def linearize_text(rels: RelationSet, inst: Instance, schema: Schema) -> str:
    """One-line text form of :func:`linearize` (EOS dropped)."""
    return " ".join(t.surface for t in linearize(rels, inst, schema)[:-1])


def postprocess_hyphens(s: str, sentence: str) -> str:
    """Undo tokenizer spacing around hyphens where the sentence supports it.

    The fully collapsed string wins if it occurs in ``sentence``; otherwise
    each `` - `` is collapsed on its own when the joined neighbouring words
    occur in ``sentence``.
    """
    if " - " not in s:
        return s
    full = s.replace(" - ", "-")
    if full in sentence:
        return full
    parts = s.split(" - ")
    out = parts[0]
    for part in parts[1:]:
        left = out.rsplit(" ", 1)[-1]
        right = part.split(" ", 1)[0]
        if f"{left}-{right}" in sentence:
            out = f"{out}-{part}"
        else:
            out = f"{out} - {part}"
    return out


class _DrugMatcher:
    """Resolves generated drug strings to instance drug indices."""

    def __init__(self, inst: Instance):
        self.sentence = inst.sentence
        self.by_text: dict[str, int] = {}
        self.by_tokens: dict[tuple[str, ...], int] = {}
        for i, d in enumerate(inst.drugs):
            self.by_text.setdefault(d.text, i)
            self.by_tokens.setdefault(tuple(surfaces(tokenize(d.text))), i)

    def normalize(self, toks: Sequence[str]) -> str:
        return postprocess_hyphens(" ".join(toks), self.sentence)

    def match(self, toks: Sequence[str]) -> int | None:
        idx = self.by_text.get(self.normalize(toks))
        if idx is None:
            idx = self.by_tokens.get(tuple(toks))
        return idx


def _as_surfaces(seq: Sequence[Token | str] | str) -> list[str]:
    if isinstance(seq, str):
        seq = tokenize(seq)
    out = surfaces(seq)
    if EOS in out:
        out = out[: out.index(EOS)]
    return out


class _Builder:
    """Accumulates relations while parsing, emitting diagnostics."""

    def __init__(self, matcher: _DrugMatcher):
        self.matcher = matcher
        self.diags: list[Diagnostic] = []
        # keyed by drug set: one label per combination, as in gold data
        self.relations: dict[frozenset, Relation] = {}

    def resolve(self, drug_strings: list[tuple[list[str], int]]) -> list[int]:
        idxs: list[int] = []
        for toks, pos in drug_strings:
            idx = self.matcher.match(toks)
            if idx is None:
                self.diags.append(Diagnostic("UnknownDrugString", pos, self.matcher.normalize(toks)))
            elif idx in idxs:
                self.diags.append(Diagnostic("DuplicateDrugInCombination", pos, self.matcher.normalize(toks)))
            else:
                idxs.append(idx)
        return idxs

    def add(self, drug_strings: list[tuple[list[str], int]], label: Label, pos: int) -> None:
        idxs = self.resolve(drug_strings)
        if len(idxs) < 2:
            self.diags.append(Diagnostic("CombinationTooSmall", pos))
            return
        key = frozenset(idxs)
        if key in self.relations:
            self.diags.append(Diagnostic("DuplicateCombination", pos))
            return
        self.relations[key] = Relation(tuple(idxs), label)

    def result(self) -> tuple[RelationSet, list[Diagnostic]]:
        return RelationSet(tuple(self.relations.values())), self.diags


def _parse_flat(toks: list[str], schema: Schema, builder: _Builder) -> None:
    labels = schema.label_tokens
    drugs: list[tuple[list[str], int]] = []
    cur: list[str] = []
    start = 0
    for pos, tok in enumerate(toks):
        if tok == schema.sep:
            if cur:
                drugs.append((cur, start))
            cur = []
        elif tok in labels:
            if cur:
                builder.diags.append(Diagnostic("UnterminatedCombination", start, "drug without separator"))
            builder.add(drugs, labels[tok], pos)
            drugs, cur = [], []
        else:
            if not cur:
                start = pos
            cur.append(tok)
    if cur or drugs:
        builder.diags.append(Diagnostic("UnterminatedCombination", max(len(toks) - 1, 0), "no label"))


def _split_entities(toks: list[str], builder: _Builder) -> tuple[list[tuple[list[str], int]], int]:
    """Entity list up to ``@NER@``; returns the entities and the index after the marker."""
    entities: list[tuple[list[str], int]] = []
    cur: list[str] = []
    start = 0
    for pos, tok in enumerate(toks):
        if tok == NER:
            if cur:
                entities.append((cur, start))
            return entities, pos + 1
        if tok == SEMI:
            if cur:
                entities.append((cur, start))
            cur = []
        else:
            if not cur:
                start = pos
            cur.append(tok)
    if cur:
        entities.append((cur, start))
    builder.diags.append(Diagnostic("UnterminatedCombination", max(len(toks) - 1, 0), "entity list without @NER@"))
    return entities, len(toks)


def _parse_ner(toks: list[str], schema: Schema, builder: _Builder) -> None:
    labels = schema.label_tokens
    entities, i = _split_entities(toks, builder)
    n_rel = 0
    drugs: list[tuple[list[str], int]] = []
    cur: list[str] = []
    start = i
    for pos in range(i, len(toks)):
        tok = toks[pos]
        if tok == SEMI:
            if cur:
                drugs.append((cur, start))
            cur = []
        elif tok in labels:
            if cur:
                drugs.append((cur, start))
            builder.add(drugs, labels[tok], pos)
            n_rel += 1
            drugs, cur = [], []
        elif tok == NER:
            builder.diags.append(Diagnostic("UnterminatedCombination", pos, "repeated @NER@"))
        else:
            if not cur:
                start = pos
            cur.append(tok)
    if cur or drugs:
        builder.diags.append(Diagnostic("UnterminatedCombination", max(len(toks) - 1, 0), "no label"))
    if n_rel == 0 and not (cur or drugs):
        builder.add(entities, Label.NOCOMB, i - 1 if i else 0)


def delinearize(seq: Sequence[Token | str] | str, inst: Instance, schema: Schema) -> tuple[RelationSet, list[Diagnostic]]:
    """Parse a (possibly malformed) generated sequence into a relation set.

    Never raises: fragments that cannot be read are dropped and reported
    as diagnostics.  Parsing stops at the first EOS.
    """
    toks = _as_surfaces(seq)
    builder = _Builder(_DrugMatcher(inst))
    if not toks:
        builder.diags.append(Diagnostic("EmptyOutput", 0))
        return builder.result()
    if schema.mode is Mode.NER_EXTENDED:
        _parse_ner(toks, schema, builder)
    else:
        _parse_flat(toks, schema, builder)
    return builder.result()


def delinearize_entities(seq: Sequence[Token | str] | str, inst: Instance) -> set[str]:
    """Entity names listed before ``@NER@``, hyphen-repaired.

    Strings that match an instance drug are replaced by its exact surface
    text; anything else is kept as generated so it counts against precision.
    """
    toks = _as_surfaces(seq)
    matcher = _DrugMatcher(inst)
    scratch = _Builder(matcher)
    entities, _ = _split_entities(toks, scratch)
    names = set()
    for ent, _pos in entities:
        idx = matcher.match(ent)
        names.add(inst.drugs[idx].text if idx is not None else matcher.normalize(ent))
    return names
