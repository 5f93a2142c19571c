"""Common-sense guided knowledge graph completion.

Explicit mode (ECSE) derives concept-level triples from an entity/concept map
and uses them for negative sampling and coarse-to-fine inference. Implicit
mode (ICSE) learns relation-aware concept embeddings jointly with the fact
embeddings and ranks with a dual score.
"""

__version__ = "0.1.0"

from .kgdata import (
    ConceptMap,
    KnowledgeGraph,
    RelationCategory,
    RelationProfile,
    Triple,
    known_triple,
    load_concept_map,
    load_dataset,
    profile_relations,
)
from .commonsense import CommonSenseStore, generate, head_concepts, setform_of, tail_concepts
from .scorers import Mode, ModelKind, ModelState, init_state

__all__ = [
    "CommonSenseStore",
    "ConceptMap",
    "KnowledgeGraph",
    "Mode",
    "ModelKind",
    "ModelState",
    "RelationCategory",
    "RelationProfile",
    "Triple",
    "generate",
    "head_concepts",
    "init_state",
    "known_triple",
    "load_concept_map",
    "load_dataset",
    "profile_relations",
    "setform_of",
    "tail_concepts",
]
