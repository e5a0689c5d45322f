"""Copy constraint and the optional output-grammar automaton.

The copy constraint limits every decoding step to token types that occur
in the encoder input plus the schema's structural tokens and EOS.  Strict
mode additionally intersects that set with what the output grammar allows
next.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from combex.corpus import Diagnostic
from combex.linearizer import Mode, Schema
from combex.tokenizer import EOS, NER, SEMI, UNK, Kind, Token, tokenize


@dataclass(frozen=True)
class CopyMask:
    allowed: frozenset[str]

    def __contains__(self, surface: str) -> bool:
        return surface in self.allowed


def copyable(input_tokens: Sequence[Token], schema: Schema) -> list[str]:
    """Distinct copyable input types, in first-occurrence order."""
    structural = set(schema.specials) | {EOS, UNK}
    out = dict.fromkeys(
        t.surface for t in input_tokens if t.kind is not Kind.SPECIAL and t.surface not in structural
    )
    return list(out)


def copy_mask(input_tokens: Sequence[Token] | str, schema: Schema) -> CopyMask:
    if isinstance(input_tokens, str):
        input_tokens = tokenize(input_tokens)
    return CopyMask(frozenset(copyable(input_tokens, schema)) | frozenset(schema.specials) | {EOS})


class GrammarState(str, Enum):
    START = "Start"
    IN_DRUG = "InDrug"
    AFTER_SEP = "AfterSep"
    AFTER_LABEL = "AfterLabel"
    NER_START = "NerStart"
    NER_ENTITY = "NerEntity"
    NER_AFTER_SEMI = "NerAfterSemi"
    AFTER_NER = "AfterNer"
    REL_FIRST = "RelFirstDrug"
    REL_AFTER_SEMI = "RelAfterSemi"
    REL_MORE = "RelLaterDrug"
    DONE = "Done"


# Token classes: "word", "sep", "label", "ner", "eos".
_FLAT = {
    GrammarState.START: {"word": GrammarState.IN_DRUG},
    GrammarState.IN_DRUG: {"word": GrammarState.IN_DRUG, "sep": GrammarState.AFTER_SEP},
    GrammarState.AFTER_SEP: {"word": GrammarState.IN_DRUG, "label": GrammarState.AFTER_LABEL},
    GrammarState.AFTER_LABEL: {"word": GrammarState.IN_DRUG, "eos": GrammarState.DONE},
    GrammarState.DONE: {},
}
_NER = {
    GrammarState.NER_START: {"word": GrammarState.NER_ENTITY},
    GrammarState.NER_ENTITY: {"word": GrammarState.NER_ENTITY, "sep": GrammarState.NER_AFTER_SEMI, "ner": GrammarState.AFTER_NER},
    GrammarState.NER_AFTER_SEMI: {"word": GrammarState.NER_ENTITY},
    GrammarState.AFTER_NER: {"word": GrammarState.REL_FIRST, "eos": GrammarState.DONE},
    GrammarState.REL_FIRST: {"word": GrammarState.REL_FIRST, "sep": GrammarState.REL_AFTER_SEMI},
    GrammarState.REL_AFTER_SEMI: {"word": GrammarState.REL_MORE},
    GrammarState.REL_MORE: {"word": GrammarState.REL_MORE, "sep": GrammarState.REL_AFTER_SEMI, "label": GrammarState.AFTER_NER},
    GrammarState.DONE: {},
}
# States in which the sequence may end without an explicit EOS.
_FINAL = {GrammarState.AFTER_LABEL, GrammarState.AFTER_NER, GrammarState.DONE}


def _table(schema: Schema) -> dict:
    return _NER if schema.mode is Mode.NER_EXTENDED else _FLAT


def start_state(schema: Schema) -> GrammarState:
    return GrammarState.NER_START if schema.mode is Mode.NER_EXTENDED else GrammarState.START


def token_class(surface: str, schema: Schema) -> str:
    if surface == EOS:
        return "eos"
    if surface == schema.sep:
        return "sep"
    if surface in schema.label_tokens:
        return "label"
    if schema.mode is Mode.NER_EXTENDED and surface == NER:
        return "ner"
    return "word"


def advance(gs: GrammarState, surface: str, schema: Schema) -> GrammarState | None:
    """Next state, or ``None`` if ``surface`` is not legal in ``gs``."""
    return _table(schema).get(gs, {}).get(token_class(surface, schema))


def next_allowed(gs: GrammarState, mask: CopyMask, schema: Schema, strict: bool = True) -> frozenset[str]:
    """Tokens allowed at the next step: the copy mask, cut down by the grammar when strict."""
    if not strict:
        return mask.allowed
    legal = _table(schema).get(gs, {})
    return frozenset(s for s in mask.allowed if token_class(s, schema) in legal)


def validate_sequence(seq: Sequence[Token | str] | str, input_tokens: Sequence[Token] | str, schema: Schema) -> list[Diagnostic]:
    """Copy violations plus the first grammar error of ``seq``; empty if clean."""
    if isinstance(seq, str):
        seq = tokenize(seq)
    toks = [str(t) for t in seq]
    if EOS in toks:
        toks = toks[: toks.index(EOS) + 1]
    mask = copy_mask(input_tokens, schema)
    diags = [Diagnostic("CopyViolation", pos, tok) for pos, tok in enumerate(toks) if tok not in mask]
    if not toks or toks == [EOS]:
        return diags + [Diagnostic("EmptyOutput", 0)]
    gs = start_state(schema)
    for pos, tok in enumerate(toks):
        nxt = advance(gs, tok, schema)
        if nxt is None:
            cls = token_class(tok, schema)
            code = "CombinationTooSmall" if cls == "label" and gs in (GrammarState.START, GrammarState.AFTER_LABEL, GrammarState.REL_FIRST) else "UnterminatedCombination"
            diags.append(Diagnostic(code, pos, f"{tok!r} not allowed in state {gs.value}"))
            return diags
        gs = nxt
    if gs not in _FINAL:
        diags.append(Diagnostic("UnterminatedCombination", len(toks) - 1, f"sequence ends in state {gs.value}"))
    return diags
