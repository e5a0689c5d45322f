"""
Exact-match scoring
===================

A predicted combination counts only if its drug set and its label both
match a gold combination.
"""

from combex.corpus import Label
from combex.evaluation import collapse_anycomb, score_ner, score_relations

gold = [{(frozenset({"a", "b"}), Label.POS), (frozenset({"c", "d"}), Label.POS)}]
pred = [{(frozenset({"a", "b"}), Label.POS), (frozenset({"c", "d"}), Label.COMB)}]

report = score_relations(pred, gold)
print(report.to_json(indent=1))

# POS and COMB merged: the mislabeled pair now counts
collapsed = score_relations([collapse_anycomb(p) for p in pred], [collapse_anycomb(g) for g in gold])
print("ANY-COMB F1", collapsed["ANY_COMB"].f1)

# swapping prediction and gold swaps precision and recall
extra = [pred[0] | {(frozenset({"a", "e"}), Label.NOCOMB)}]
report = score_relations(extra, gold)
swapped = score_relations(gold, extra)
print(report.micro.p, report.micro.r, "|", swapped.micro.p, swapped.micro.r)

# entities for the NER-extended task
print(score_ner([{"a", "b", "c"}], [{"a", "b"}]).to_dict()["NER"])
