"""Whitespace/punctuation tokenizer and the id<->token vocabulary."""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from combex.corpus import SEP, Instance, window

BOS = "[BOS]"
EOS = "[EOS]"
UNK = "[UNK]"
DRUG = "@DRUG@"
SEMI = ";"
NER = "@NER@"

# Fixed special block; order defines ids 0..len-1.
SPECIAL_TOKENS = (
    SEP, BOS, EOS, DRUG, SEMI,
    "@POS@", "@COMB@", "@NOCOMB@", "@NON-POS@", "@ANY-COMB@", NER,
)
# Bracketed specials that tokenize() must never break apart. ";" is left
# out on purpose: in running text it is ordinary punctuation.
_MARKERS = frozenset(s for s in SPECIAL_TOKENS if s != SEMI)


class Kind(str, Enum):
    WORD = "WORD"
    PUNCT = "PUNCT"
    SPECIAL = "SPECIAL"


@dataclass(frozen=True)
class Token:
    surface: str
    kind: Kind = Kind.WORD

    def __str__(self) -> str:
        return self.surface


def special(surface: str) -> Token:
    return Token(surface, Kind.SPECIAL)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def _split_chunk(chunk: str) -> list[Token]:
    out: list[Token] = []
    word: list[str] = []
    for ch in chunk:
        if _is_punct(ch):
            if word:
                out.append(Token("".join(word), Kind.WORD))
                word = []
            out.append(Token(ch, Kind.PUNCT))
        else:
            word.append(ch)
    if word:
        out.append(Token("".join(word), Kind.WORD))
    return out


def tokenize(text: str) -> list[Token]:
    """Split ``text`` into word, punctuation and special-marker tokens.

    Every punctuation or symbol character becomes its own token, so
    ``"5-fluorouracil"`` gives ``5 / - / fluorouracil`` and a trailing
    full stop is detached.  Case is preserved.
    """
    tokens: list[Token] = []
    for chunk in text.split():
        if chunk in _MARKERS:
            tokens.append(special(chunk))
        else:
            tokens.extend(_split_chunk(chunk))
    return tokens


def detokenize(tokens: Iterable[Token | str]) -> str:
    return " ".join(str(t) for t in tokens)


def surfaces(tokens: Iterable[Token | str]) -> list[str]:
    return [str(t) for t in tokens]


@dataclass(frozen=True)
class Vocab:
    """Immutable id<->token bijection.

    Ids ``0..len(SPECIAL_TOKENS)-1`` are the special block, the next id is
    ``[UNK]`` and the rest are corpus tokens.
    """

    tokens: tuple[str, ...]
    _index: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS or self.tokens[len(SPECIAL_TOKENS)] != UNK:
            raise ValueError("vocab does not start with the special block")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocab")
        object.__setattr__(self, "_index", index)

    @property
    def unk_id(self) -> int:
        return len(SPECIAL_TOKENS)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, surface: str) -> bool:
        return surface in self._index

    def id(self, surface: str) -> int:
        return self._index.get(surface, self.unk_id)

    def ids(self, toks: Iterable[Token | str]) -> list[int]:
        return [self.id(str(t)) for t in toks]

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))

    @classmethod
    def from_counts(cls, counts: Counter) -> "Vocab":
        reserved = set(SPECIAL_TOKENS) | {UNK}
        ordered = sorted((t for t in counts if t not in reserved), key=lambda t: (-counts[t], t))
        return cls(SPECIAL_TOKENS + (UNK,) + tuple(ordered))


def build_vocab(corpus: Sequence[Instance | str], n_ctx: int = 0) -> Vocab:
    """Vocabulary over the windowed inputs of ``corpus``.

    Items may be instances (windowed with ``n_ctx``) or raw strings. Ids
    are assigned by descending frequency with a lexicographic tie-break,
    so the result does not depend on corpus order.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    for item in corpus:
        text = item if isinstance(item, str) else window(item, n_ctx)
        counts.update(t.surface for t in tokenize(text))
    return Vocab.from_counts(counts)
