"""Template-based synthetic corpus with gold relations known by construction.

Each target sentence is a *frame* wrapped around a *combination phrase*
and an *outcome phrase*.  The label is carried by the phrase vocabulary
(combination connectors, efficacy vs. administration outcomes, comparison
connectors), which is shared by both splits, while the frames are split so
that train and test never share a template.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from combex.corpus import DrugSpan, Instance, Label, Relation, RelationSet

DRUG_LEXICON = (
    "sorafenib", "curcumin", "docetaxel", "irinotecan", "lamotrigine", "carbamazepine",
    "cisplatin", "gemcitabine", "leucovorin", "oxaliplatin", "paclitaxel", "carboplatin",
    "rituximab", "lenalidomide", "bortezomib", "dexamethasone", "prednisone", "piroxicam",
    "celecoxib", "erlotinib", "enzalutamide", "apalutamide", "abiraterone", "bevacizumab",
    "trastuzumab", "pertuzumab", "capecitabine", "temozolomide", "doxorubicin", "cyclophosphamide",
    "vincristine", "etoposide", "methotrexate", "cytarabine", "imatinib", "dasatinib",
    "nilotinib", "ibrutinib", "venetoclax", "obinutuzumab", "ofatumumab", "chlorambucil",
    "fludarabine", "bendamustine", "azacitidine", "decitabine", "metformin", "atorvastatin",
    "simvastatin", "tamoxifen", "letrozole", "anastrozole", "everolimus", "sunitinib",
    "pazopanib", "nivolumab", "ipilimumab", "pembrolizumab", "olaparib", "lapatinib",
    "5-fluorouracil", "myo-inositol", "nab-paclitaxel", "Nal-IRI", "6-mercaptopurine",
    "interferon-alpha", "ado-trastuzumab", "peg-interferon", "S-1", "N-acetylcysteine",
)

DISEASES = (
    "hepatocellular carcinoma", "metastatic prostate cancer", "follicular lymphoma",
    "advanced breast cancer", "non-small cell lung cancer", "pancreatic cancer",
    "multiple myeloma", "chronic lymphocytic leukemia", "colorectal cancer", "glioblastoma",
)

POS_OUTCOMES = (
    "improved overall survival", "significantly inhibited tumor growth",
    "produced a synergistic antitumor effect", "was highly effective",
    "achieved durable complete responses", "enhanced the therapeutic effect",
)
COMB_OUTCOMES = (
    "was administered every 21 days", "was given on days 1 and 8",
    "was evaluated in a phase II trial", "was used as first-line treatment",
    "was scheduled for six cycles", "was delivered intravenously",
)
NOCOMB_OUTCOMES = (
    "showed different toxicity profiles", "were analysed in separate cohorts",
    "were prescribed independently", "differed in their adverse events",
)

# Combination frames: {C} combination phrase, {O} outcome, {D} disease.
COMB_FRAMES_TRAIN = (
    "{C} {O} in patients with {D}.",
    "In {D}, {C} {O}.",
    "Our data show that {C} {O} in {D}.",
    "In this study of {D}, {C} {O}.",
    "We report that {C} {O} for {D}.",
    "Among patients with {D}, {C} {O}.",
)
# Held-out frames reorder training words so the split tests generalisation
# over structure rather than vocabulary.
COMB_FRAMES_TEST = (
    "In patients with {D}, {C} {O}.",
    "We show that {C} {O} in {D}.",
    "{C} {O} in this study of {D}.",
)
NOCOMB_FRAMES_TRAIN = (
    "{C} {O} in patients with {D}.",
    "In {D}, {C} {O}.",
    "Our data show that {C} {O} in {D}.",
    "In this study of {D}, {C} {O}.",
)
NOCOMB_FRAMES_TEST = (
    "In patients with {D}, {C} {O}.",
    "{C} {O} in this study of {D}.",
)

DISTRACTOR_CLAUSES = (
    ", whereas {X} alone had no effect",
    ", while {X} was given separately",
)

FILLERS = (
    "Background data on {D} remain limited.",
    "The prognosis of {D} is poor.",
    "A total of 120 patients were enrolled.",
    "Response was assessed every eight weeks.",
    "Adverse events were mostly mild.",
    "Further trials are warranted.",
    "Median follow-up was 24 months.",
    "The study was approved by the ethics committee.",
)


def _join_list(slots: list[str], last: str) -> str:
    if len(slots) == 2:
        return f"{slots[0]} {last} {slots[1]}"
    return ", ".join(slots[:-1]) + f" {last} {slots[-1]}"


def _combo_phrase(slots: list[str], rng: np.random.Generator) -> str:
    """Connector phrasing for one combination (the subject of the clause)."""
    style = int(rng.integers(4))
    if style == 0:
        return _join_list(slots, "plus")
    if style == 1:
        return _join_list(slots[:-1], "and") + f" in combination with {slots[-1]}" if len(slots) > 2 else f"{slots[0]} in combination with {slots[1]}"
    if style == 2:
        return "the combination of " + _join_list(slots, "and")
    return (", ".join(slots[:-1]) if len(slots) > 2 else slots[0]) + f" combined with {slots[-1]}"


def _separate_phrase(slots: list[str], rng: np.random.Generator) -> str:
    style = int(rng.integers(3))
    if style == 0:
        return _join_list(slots, "versus")
    if style == 1:
        return "either " + _join_list(slots, "or")
    return _join_list(slots, "or") + " given alone"


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 500
    n_test: int = 100
    lexicon_size: int = len(DRUG_LEXICON)
    max_drugs: int = 6
    class_mix: tuple[float, float, float] = (0.50, 0.23, 0.27)  # POS, COMB, NOCOMB
    multi_fraction: float = 0.16
    distractor_rate: float = 0.2
    arity_mix: tuple[float, ...] = (0.70, 0.19, 0.06, 0.03, 0.02)  # 2..6 drugs
    min_sentences: int = 3
    max_sentences: int = 7
    seed: int = 0
    _lexicon: tuple[str, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.n_train <= 0 or self.n_test <= 0:
            raise ValueError("instance counts must be positive")
        if not 2 <= self.max_drugs <= 6:
            raise ValueError("max_drugs must be in 2..6")
        if abs(sum(self.class_mix) - 1.0) > 1e-9 or min(self.class_mix) < 0:
            raise ValueError("class_mix must be a probability vector")
        if not 0.0 <= self.multi_fraction <= 1.0:
            raise ValueError("multi_fraction must lie in [0, 1]")
        if self.lexicon_size < 2 * self.max_drugs:
            raise ValueError("lexicon too small")


def make_lexicon(size: int) -> tuple[str, ...]:
    """The first ``size`` built-in drug names, extended with invented ones."""
    names = list(DRUG_LEXICON[:size])
    syllables = ("ba", "ce", "di", "lo", "mu", "ra", "ti", "zo", "ne", "vi")
    suffixes = ("mab", "nib", "stat", "cin", "zole", "tide")
    k = 0
    while len(names) < size:
        a, b, c = k % 10, (k // 10) % 10, (k // 100) % 6
        name = syllables[a] + syllables[b] + suffixes[c]
        if k % 7 == 0:
            name = f"{name}-{syllables[(a + 3) % 10]}"
        if name not in names:
            names.append(name)
        k += 1
    return tuple(names)


_SLOT = re.compile(r"\{(\d+)\}")


def _render(template: str, names: list[str]) -> tuple[str, list[DrugSpan], list[int]]:
    """Fill ``{k}`` slots, returning the sentence, spans and slot order."""
    out: list[str] = []
    spans: list[DrugSpan] = []
    order: list[int] = []
    pos = 0
    length = 0
    for m in _SLOT.finditer(template):
        chunk = template[pos:m.start()]
        out.append(chunk)
        length += len(chunk)
        slot = int(m.group(1))
        name = names[slot]
        spans.append(DrugSpan(length, length + len(name), name))
        order.append(slot)
        out.append(name)
        length += len(name)
        pos = m.end()
    out.append(template[pos:])
    return "".join(out), spans, order


def _capitalize(template: str) -> str:
    if template and not template.startswith("{"):
        return template[0].upper() + template[1:]
    return template


class _Generator:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator, lexicon: tuple[str, ...]):
        self.cfg = cfg
        self.rng = rng
        self.lexicon = lexicon

    def choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def arity(self, cap: int) -> int:
        probs = np.array(self.cfg.arity_mix[: cap - 1], dtype=float)
        return 2 + int(self.rng.choice(len(probs), p=probs / probs.sum()))

    def target(self, label: Label, frames_comb, frames_nocomb):
        """Target-sentence template with ``{k}`` slots and slot-level relations."""
        cfg, rng = self.cfg, self.rng
        # Phrases are passed to str.format as arguments, so single-brace slots
        # survive; anything spliced into the frame itself needs doubled braces.
        if label is Label.NOCOMB:
            n = self.arity(cfg.max_drugs)
            slots = [f"{{{k}}}" for k in range(n)]
            phrase = _separate_phrase(slots, rng)
            outcome = self.choice(NOCOMB_OUTCOMES)
            frame = self.choice(frames_nocomb)
            return frame, phrase, outcome, n, [(list(range(n)), label)]

        outcome = self.choice(POS_OUTCOMES if label is Label.POS else COMB_OUTCOMES)
        frame = self.choice(frames_comb)
        multi = rng.random() < cfg.multi_fraction
        if multi:
            if cfg.max_drugs >= 4 and rng.random() < 0.5:
                # "A plus B and C plus D" -> two binary combinations.
                slots = [f"{{{k}}}" for k in range(4)]
                phrase = f"{slots[0]} plus {slots[1]} and {slots[2]} plus {slots[3]}"
                rels = [([0, 1], label), ([2, 3], label)]
                n = 4
            else:
                # "A and B, each combined with C," -> {A, C}, {B, C}.
                n_shared = 2 if cfg.max_drugs < 4 or rng.random() < 0.7 else 3
                slots = [f"{{{k}}}" for k in range(n_shared + 1)]
                phrase = _join_list(slots[:n_shared], "and") + f", each combined with {slots[-1]},"
                rels = [([k, n_shared], label) for k in range(n_shared)]
                n = n_shared + 1
        else:
            cap = cfg.max_drugs - (1 if cfg.max_drugs > 2 else 0)
            n = self.arity(cap)
            slots = [f"{{{k}}}" for k in range(n)]
            phrase = _combo_phrase(slots, rng)
            rels = [(list(range(n)), label)]
        if n < cfg.max_drugs and rng.random() < cfg.distractor_rate:
            frame = frame[:-1] + self.choice(DISTRACTOR_CLAUSES).replace("{X}", f"{{{{{n}}}}}") + "."
            n += 1
        return frame, phrase, outcome, n, rels

    def instance(self, doc_id: str, frames_comb, frames_nocomb) -> Instance:
        cfg, rng = self.cfg, self.rng
        label = (Label.POS, Label.COMB, Label.NOCOMB)[int(rng.choice(3, p=np.array(cfg.class_mix)))]
        frame, phrase, outcome, n, rels = self.target(label, frames_comb, frames_nocomb)
        disease = self.choice(DISEASES)
        if frame.startswith("{C}"):
            phrase = _capitalize(phrase)
        template = frame.format(C=phrase, O=outcome, D=disease)
        names = [self.lexicon[i] for i in rng.choice(len(self.lexicon), size=n, replace=False)]
        sentence, spans, order = _render(template, names)
        # drugs are stored left to right; map slots to drug indices
        slot_to_idx = {slot: k for k, slot in enumerate(order)}
        relations = tuple(Relation(tuple(slot_to_idx[s] for s in slots), lab) for slots, lab in rels)

        n_sent = int(rng.integers(cfg.min_sentences, cfg.max_sentences + 1))
        target = int(rng.integers(n_sent))
        sentences = [self.choice(FILLERS).format(D=disease) for _ in range(n_sent)]
        sentences[target] = sentence
        return Instance(doc_id, tuple(sentences), target + 1, tuple(spans), RelationSet(relations))


def generate(cfg: SynthConfig) -> tuple[list[Instance], list[Instance]]:
    """Train and test splits; identical output for identical configs."""
    rng = np.random.default_rng(cfg.seed)
    gen = _Generator(cfg, rng, make_lexicon(cfg.lexicon_size))
    train = [gen.instance(f"synth-train-{k:05d}", COMB_FRAMES_TRAIN, NOCOMB_FRAMES_TRAIN) for k in range(cfg.n_train)]
    test = [gen.instance(f"synth-test-{k:05d}", COMB_FRAMES_TEST, NOCOMB_FRAMES_TEST) for k in range(cfg.n_test)]
    return train, test
