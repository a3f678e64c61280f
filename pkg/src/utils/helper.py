import os
import random
import tempfile
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel

from src.config import Config
from src.utils.logger import get_logger

logger = get_logger(__name__)


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch; returns a dedicated torch generator for data order."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    generator = torch.Generator()
    generator.manual_seed(seed)
    logger.debug(f"Seeded all RNGs with {seed}")
    return generator


def resolve_device(requested: str = Config.DEVICE) -> torch.device:
    if requested == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(requested)


def resolve_data_path(path: str | Path) -> Path:
    candidate = Path(path).expanduser()
    if candidate.exists() or candidate.is_absolute() or not Config.APNET_DATA_ROOT:
        return candidate
    fallback = Path(Config.APNET_DATA_ROOT).expanduser() / candidate
    logger.info(f"Resolved dataset path {candidate} against APNET_DATA_ROOT: {fallback}")
    return fallback


def atomic_write_bytes(path: str | Path, payload: bytes) -> Path:
    """Write-then-rename so a crash never leaves a partial file at `path`."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return target


def append_jsonl(path: str | Path, record: BaseModel) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("a", encoding="utf-8") as handle:
        handle.write(record.model_dump_json() + "\n")
