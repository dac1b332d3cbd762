"""Query-to-goal control pipeline on a planar arm-and-cube testbed.

The pipeline decomposes language-style control into (i) finding environment
configurations whose analytic multiview embeddings score highly against a
query embedding, via retrieval from a precomputed store plus surrogate-model
gradient finetuning, and (ii) reaching the chosen configuration with a
goal-conditioned agent trained by PPO.
"""

from .core import Query, cosine, multiview_embed, normalize, score
from .env import (
    Action,
    Configuration,
    SceneEncoder,
    State,
    ViewSpec,
    config_of,
    project,
    reset,
    step,
    true_config_embedding,
)
from .dataset import (
    ConfigDataset,
    EmbeddingStore,
    build_diversity_dataset,
    diversity_optimize,
    embed_dataset,
    sample_random_policy,
    sample_uniform,
)
from .distill import DistilledModel, DistillHyper, TrainReport, evaluate, train
from .goalgen import (
    GoalCandidate,
    GoalOptions,
    RetrievalResult,
    finetune,
    generate_goal,
    retrieve_topk,
    select_best,
)
from .concepts import ConceptLibrary, build_concepts, remote_embed

__version__ = "0.1.0"
