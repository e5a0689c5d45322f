import pytest

from combex.corpus import DrugSpan, Instance, Label, Relation, RelationSet


def make_instance(doc_id, sentence, drugs, relations, context=(), target_index=None):
    """Instance from drug surface strings; spans are found left to right."""
    spans = []
    cursor = 0
    for name in drugs:
        start = sentence.index(name, cursor)
        spans.append(DrugSpan(start, start + len(name), name))
        cursor = start + len(name)
    rels = RelationSet(tuple(Relation(tuple(idx), Label(lab)) for idx, lab in relations))
    sentences = list(context) or [sentence]
    if target_index is None:
        target_index = 1
    if context:
        sentences[target_index - 1] = sentence
    return Instance(doc_id, tuple(sentences), target_index, tuple(spans), rels)


SORAFENIB = make_instance(
    "table1-pos",
    "Codelivery of sorafenib and curcumin by directed self-assembled nanoparticles enhances "
    "therapeutic effect on hepatocellular carcinoma.",
    ["sorafenib", "curcumin"], [((0, 1), "POS")])

DOCETAXEL = make_instance(
    "table1-comb",
    "Patients received docetaxel 35 mg/m(2) and irinotecan 60 mg/m(2), intravenously, on Days 1 "
    "and 8, every 21 days, until disease progression.",
    ["docetaxel", "irinotecan"], [((0, 1), "COMB")])

LAMOTRIGINE = make_instance(
    "table1-nocomb",
    "The results showed that lamotrigine did not produce any change in cognitive function, while "
    "carbamazepine produced cognitive dysfunction.",
    ["lamotrigine", "carbamazepine"], [((0, 1), "NOCOMB")])

APALUTAMIDE = make_instance(
    "apalutamide",
    "In non-metastatic castration-resistant prostate cancer, two second-generation anti-androgens, "
    "apalutamide and enzalutamide, when used in combination with ADT, have demonstrated a "
    "significant benefit in metastasis-free survival.",
    ["apalutamide", "enzalutamide", "ADT"], [((0, 2), "POS"), ((1, 2), "POS")])

DEXAMETHASONE = make_instance(
    "ner-pos",
    "Dexamethasone and piroxicam provided in the diet were found to significantly inhibit lung tumors "
    "induced by 60 mg/kg vinyl carbamate at 24 weeks whereas myo-inositol also provided in the diet, "
    "did not significantly inhibit tumor formation.",
    ["Dexamethasone", "piroxicam", "myo-inositol"], [((0, 1), "POS")])

NIFE = make_instance(
    "nife",
    "Nal-IRI with 5-fluorouracil (5-FU) and leucovorin or gemcitabine plus cisplatin in advanced "
    "biliary tract cancer-the NIFE trial.",
    ["Nal-IRI", "5-fluorouracil", "leucovorin", "gemcitabine", "cisplatin"],
    [((1, 2), "COMB"), ((3, 4), "COMB")])

WORKED_INSTANCES = [SORAFENIB, DOCETAXEL, LAMOTRIGINE, APALUTAMIDE, DEXAMETHASONE, NIFE]


@pytest.fixture
def worked_instances():
    return list(WORKED_INSTANCES)


FIVE_SENTENCES = make_instance(
    "five", "S3 has a and b.", ["a", "b"], [((0, 1), "POS")],
    context=["S1.", "S2.", "S3 has a and b.", "S4.", "S5."], target_index=3)


# Hypothesis strategy for valid instances with distinct drug names.
from hypothesis import strategies as st  # noqa: E402

NAME_POOL = ("aspirin", "5-fluorouracil", "S-1", "cisplatin", "ADT", "Nal-IRI", "peg-interferon",
             "gemcitabine", "leucovorin", "docetaxel", "N-acetylcysteine", "sorafenib")


@st.composite
def instances(draw, max_drugs=6, allow_nocomb=True):
    n = draw(st.integers(2, max_drugs))
    names = draw(st.permutations(NAME_POOL))[:n]
    fillers = draw(st.lists(st.sampled_from(["and", "with", "plus", "or", "patients", ","]),
                            min_size=n + 1, max_size=n + 1))
    pieces = [fillers[0]]
    for name, filler in zip(names, fillers[1:]):
        pieces += [name, filler]
    sentence = " ".join(pieces) + "."
    idx = list(range(n))
    if allow_nocomb and draw(st.booleans()) and draw(st.booleans()):
        rels = [(tuple(draw(st.permutations(idx))), "NOCOMB")]
    else:
        n_rel = draw(st.integers(1, 3))
        rels, seen = [], set()
        for _ in range(n_rel):
            size = draw(st.integers(2, n))
            drugs = tuple(draw(st.permutations(idx))[:size])
            if frozenset(drugs) in seen:
                continue
            seen.add(frozenset(drugs))
            rels.append((drugs, draw(st.sampled_from(["POS", "COMB"]))))
    return make_instance("h", sentence, list(names), rels)


# Acceptance results, printed as one PASS/FAIL line per criterion.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
