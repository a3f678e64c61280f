import os
from dotenv import load_dotenv

load_dotenv()

class Config:

    APP_NAME: str = "APNET"
    APP_VERSION = "1.0.0"
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"

    ## DATA SETTINGS
    APNET_DATA_ROOT: str | None = os.getenv("APNET_DATA_ROOT")
    NUM_WORKERS: int = int(os.getenv("NUM_WORKERS", 0))

    ## TRAINING SETTINGS
    DEVICE: str = os.getenv("DEVICE", "auto").lower()
    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", 0))
    WEIGHT_DECAY: float = float(os.getenv("WEIGHT_DECAY", 1e-4))
    LAMBDA_RATIO: float = float(os.getenv("LAMBDA_RATIO", 0.1))

    ## CHECKPOINT SETTINGS
    CHECKPOINT_MAGIC: bytes = b"APNETv1"

    # -- LOGGING SETTINGS ---
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()
    LOG_FILE: str = os.getenv("LOG_FILE", "apnet.log")

if Config.DEVICE not in ("auto", "cpu", "cuda"):
    raise ValueError(f"Critical: unsupported DEVICE '{Config.DEVICE}', expected auto, cpu or cuda.")
if Config.WEIGHT_DECAY < 0 or Config.LAMBDA_RATIO < 0:
    raise ValueError("Critical: WEIGHT_DECAY and LAMBDA_RATIO must be non-negative.")
