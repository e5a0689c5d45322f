"""
Relation sets as token sequences
================================

A gold annotation is a set of drug combinations.  The generator needs it
as a flat sequence, and its output has to be parsed back.
"""

from combex import DrugSpan, Instance, Label, Relation, RelationSet
from combex.linearizer import Mode, Ordering, Schema, Separator, delinearize, linearize_text, relabel

sentence = ("In non-metastatic castration-resistant prostate cancer, two second-generation "
            "anti-androgens, apalutamide and enzalutamide, when used in combination with ADT, "
            "have demonstrated a significant benefit in metastasis-free survival.")


def span(name):
    start = sentence.index(name)
    return DrugSpan(start, start + len(name), name)


drugs = (span("apalutamide"), span("enzalutamide"), span("ADT"))
gold = RelationSet((Relation((0, 2), Label.POS), Relation((1, 2), Label.POS)))
inst = Instance("demo", (sentence,), 1, drugs, gold)

# every schema, with its label space
for mode in Mode:
    schema = Schema(mode)
    print(f"{mode.value:13s}", linearize_text(relabel(gold, mode), inst, schema))

# ';' instead of @DRUG@
print(linearize_text(gold, inst, Schema(Mode.THREE_WAY, Separator.SEMICOLON)))

# left-to-right ordering sorts drugs by position in the sentence
print(linearize_text(gold, inst, Schema(ordering=Ordering.LEFT_TO_RIGHT)))

# parsing is total: broken fragments are dropped and reported
text = "apalutamide @DRUG@ ADT @DRUG@ @POS@ enzalutamide @POS@ ADT @DRUG@"
rels, diags = delinearize(text, inst, Schema())
print(sorted(sorted(names) for names, _ in rels.named(inst)))
for d in diags:
    print("  ", d)

# tokenization splits hyphens; parsing puts them back
nife = "Nal-IRI with 5-fluorouracil (5-FU) and leucovorin or gemcitabine plus cisplatin."
spans = []
for name in ("5-fluorouracil", "leucovorin"):
    start = nife.index(name)
    spans.append(DrugSpan(start, start + len(name), name))
inst = Instance("nife", (nife,), 1, tuple(spans), RelationSet((Relation((0, 1), Label.COMB),)))
out = linearize_text(inst.gold, inst, Schema())
print(out)
print(delinearize(out, inst, Schema())[0].named(inst))
