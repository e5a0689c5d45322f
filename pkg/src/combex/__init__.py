"""Drug-combination relation extraction framed as sequence generation."""

from combex.corpus import DrugSpan, Instance, Label, Relation, RelationSet, load_corpus, window
from combex.evaluation import ScoreReport, collapse_anycomb, score_ner, score_relations
from combex.linearizer import Mode, Ordering, Schema, Separator, delinearize, linearize, relabel
from combex.model import Checkpoint, ModelConfig, predict, train

__all__ = [
    "Checkpoint", "DrugSpan", "Instance", "Label", "ModelConfig", "Mode", "Ordering", "Relation",
    "RelationSet", "Schema", "ScoreReport", "Separator", "collapse_anycomb", "delinearize", "linearize",
    "load_corpus", "predict", "relabel", "score_ner", "score_relations", "train", "window",
]

__version__ = "0.1.0"
