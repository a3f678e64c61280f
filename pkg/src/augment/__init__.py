from src.augment.grading import grade_policies, is_heavier
from src.augment.policies import PolicyChain, PolicyKind, PolicySpec, apply_chain, apply_policy
from src.augment.views import ViewBatch, make_view_batch

__all__ = [
    "PolicyChain",
    "PolicyKind",
    "PolicySpec",
    "ViewBatch",
    "apply_chain",
    "apply_policy",
    "grade_policies",
    "is_heavier",
    "make_view_batch",
]
