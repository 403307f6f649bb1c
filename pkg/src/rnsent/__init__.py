"""Relation-network sentence encoders over supervised or latent dependency trees."""

from rnsent.encoders import EncoderConfig, SentenceEncoder
from rnsent.estimator import RelationNetClassifier
from rnsent.model import RelationNetModel
from rnsent.tensor import Parameter, Tape, Tensor
from rnsent.training import TrainConfig, grid_search, train

__all__ = [
    "EncoderConfig",
    "Parameter",
    "RelationNetClassifier",
    "RelationNetModel",
    "SentenceEncoder",
    "Tape",
    "Tensor",
    "TrainConfig",
    "grid_search",
    "train",
]

__version__ = "0.1.0"
