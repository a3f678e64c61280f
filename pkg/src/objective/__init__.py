from src.objective.loss import LossBreakdown, LossConfig, total_loss
from src.objective.regularizer import cross_pathway_similarity, gram_penalty

__all__ = ["LossBreakdown", "LossConfig", "cross_pathway_similarity", "gram_penalty", "total_loss"]
