from src.heap.network import Downsample, HeAPNetwork, heap_forward_train, heap_infer
from src.heap.spec import HeAPPathwaySpec, HeAPStageSpec, full_exchange_param_count, heap_param_count

__all__ = [
    "Downsample",
    "HeAPNetwork",
    "HeAPPathwaySpec",
    "HeAPStageSpec",
    "full_exchange_param_count",
    "heap_forward_train",
    "heap_infer",
    "heap_param_count",
]
