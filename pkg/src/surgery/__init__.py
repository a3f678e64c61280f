from src.surgery.network import PathwayNetwork, TrainForward, forward_train, infer, surgerize
from src.surgery.plan import BackboneSpec, NetworkPlan, StageSpec, StemSpec, account, resnet50_backbone, small_resnet_backbone

__all__ = [
    "BackboneSpec",
    "NetworkPlan",
    "PathwayNetwork",
    "StageSpec",
    "StemSpec",
    "TrainForward",
    "account",
    "forward_train",
    "infer",
    "resnet50_backbone",
    "small_resnet_backbone",
    "surgerize",
]
