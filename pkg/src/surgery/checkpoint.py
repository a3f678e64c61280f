"""APNETv1 checkpoint files.

Layout: the magic line ``APNETv1\\n``, an 8-byte little-endian header length, a UTF-8
JSON header (model kind, plan, per-layer pathway specs, tensor index, run metadata),
then the raw bytes of every tensor in index order. Each index entry carries name,
dtype, shape, offset and byte count, so arrays can be read without the model code.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np
import torch
import torch.nn as nn

from src.apconv.layers import APConv2d
from src.config import Config
from src.utils.exceptions import CheckpointException
from src.utils.helper import atomic_write_bytes
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = Config.CHECKPOINT_MAGIC + b"\n"
MODEL_PREFIX = "model/"


@dataclass
class Checkpoint:
    header: Dict[str, Any]
    tensors: Dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def metadata(self) -> Dict[str, Any]:
        return self.header.get("metadata", {})

    def model_state(self) -> Dict[str, torch.Tensor]:
        return {name[len(MODEL_PREFIX):]: t for name, t in self.tensors.items() if name.startswith(MODEL_PREFIX)}

    def extras(self, prefix: str) -> Dict[str, torch.Tensor]:
        return {name[len(prefix):]: t for name, t in self.tensors.items() if name.startswith(prefix)}


def _model_description(model: nn.Module) -> Dict[str, Any]:
    from src.heap.network import HeAPNetwork
    from src.surgery.network import PathwayNetwork

    if isinstance(model, PathwayNetwork):
        return {"kind": "pathways", "plan": model.plan.model_dump(mode="json")}
    if isinstance(model, HeAPNetwork):
        return {"kind": "heap", "heap": model.spec.model_dump(mode="json")}
    raise CheckpointException(f"Unsupported model type: {type(model).__name__}")


def encode_checkpoint(model: nn.Module, metadata: Dict[str, Any] | None = None,
                      extra_tensors: Dict[str, torch.Tensor] | None = None) -> bytes:
    named = {MODEL_PREFIX + name: t for name, t in model.state_dict().items()}
    named.update(extra_tensors or {})

    index, chunks, offset = [], [], 0
    for name, tensor in named.items():
        array = tensor.detach().cpu().contiguous().numpy()
        payload = array.tobytes()
        index.append({"name": name, "dtype": array.dtype.str, "shape": list(array.shape),
                      "offset": offset, "nbytes": len(payload)})
        chunks.append(payload)
        offset += len(payload)

    header = {
        "format": Config.CHECKPOINT_MAGIC.decode(),
        **_model_description(model),
        "layers": [{"name": name, "spec": layer.spec.to_dict()}
                   for name, layer in model.named_modules() if isinstance(layer, APConv2d)],
        "tensors": index,
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + len(header_bytes).to_bytes(8, "little") + header_bytes + b"".join(chunks)


def save_checkpoint(path: str | Path, model: nn.Module, metadata: Dict[str, Any] | None = None,
                    extra_tensors: Dict[str, torch.Tensor] | None = None) -> Path:
    try:
        target = atomic_write_bytes(path, encode_checkpoint(model, metadata, extra_tensors))
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {e}")
        raise CheckpointException(f"Failed to write checkpoint: {e}", details={"path": str(path)})
    logger.info(f"Checkpoint written to {target}")
    return target


def decode_checkpoint(raw: bytes) -> Checkpoint:
    if not raw.startswith(MAGIC):
        raise CheckpointException("Not an APNETv1 checkpoint (bad magic)")
    cursor = len(MAGIC)
    header_length = int.from_bytes(raw[cursor:cursor + 8], "little")
    cursor += 8
    try:
        header = json.loads(raw[cursor:cursor + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointException(f"Corrupt checkpoint header: {e}")
    if not isinstance(header, dict) or "tensors" not in header or "kind" not in header:
        raise CheckpointException("Checkpoint header lacks the model kind or tensor index")
    body = cursor + header_length

    tensors = {}
    for entry in header["tensors"]:
        start = body + entry["offset"]
        if start + entry["nbytes"] > len(raw):
            raise CheckpointException("Checkpoint is truncated", details={"tensor": entry["name"]})
        dtype = np.dtype(entry["dtype"])
        array = np.frombuffer(raw, dtype=dtype, count=entry["nbytes"] // max(dtype.itemsize, 1), offset=start)
        tensors[entry["name"]] = torch.from_numpy(array.reshape(entry["shape"]).copy())
    return Checkpoint(header=header, tensors=tensors)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointException(f"Cannot read checkpoint: {e}", details={"path": str(path)})
    checkpoint = decode_checkpoint(raw)
    logger.info(f"Loaded checkpoint {path} ({checkpoint.header['kind']}, {len(checkpoint.tensors)} arrays)")
    return checkpoint


def build_model(checkpoint: Checkpoint) -> nn.Module:
    """Rebuild the network described by the header and load its weights."""
    from src.heap.network import HeAPNetwork
    from src.heap.spec import HeAPStageSpec
    from src.surgery.network import surgerize
    from src.surgery.plan import NetworkPlan

    kind = checkpoint.header.get("kind")
    if kind == "pathways":
        model = surgerize(NetworkPlan.model_validate(checkpoint.header["plan"]))
    elif kind == "heap":
        model = HeAPNetwork(HeAPStageSpec.model_validate(checkpoint.header["heap"]))
    else:
        raise CheckpointException(f"Unknown model kind in checkpoint: {kind}")
    try:
        model.load_state_dict(checkpoint.model_state())
    except RuntimeError as e:
        raise CheckpointException(f"Checkpoint weights do not match the described model: {e}")
    return model
