"""Unsupervised disentanglement GAN for domain-adaptive person re-identification."""
from .config import LossWeights, RunConfig, TrainConfig, toy_config
from .estimator import UDGAN, PairMiner
from .metrics import EvalReport, evaluate, evaluate_embeddings
from .mining import MinedPair, MiningReport, mine_pairs
from .networks import Backbone, GeneratedQuad, TinyTrunk, UDGANNet

__version__ = "0.1.0"

__all__ = [
    "Backbone", "EvalReport", "GeneratedQuad", "LossWeights", "MinedPair", "MiningReport",
    "PairMiner", "RunConfig", "TinyTrunk", "TrainConfig", "UDGAN", "UDGANNet", "evaluate",
    "evaluate_embeddings", "mine_pairs", "toy_config",
]
