import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from exceptions import ConfigError

# Load environment variables
load_dotenv()


class LabSettings(BaseModel):
    out_dir: str = "./lab-output"
    threads: int = Field(default=1, ge=1)
    samples: int = Field(default=100_000, ge=1)
    batch_size: int = Field(default=4096, ge=1)
    max_steps: int = Field(default=2_000_000, ge=1)
    log_level: str = "INFO"
    seed: int = Field(default=20240101, ge=0, lt=2**64)

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        value = value.upper()
        if value not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {value!r}")
        return value


def load_settings(env_file: Optional[str] = None) -> LabSettings:
    """Read LAB_* variables (after an optional extra .env file) into settings."""
    if env_file is not None:
        load_dotenv(env_file, override=True)
    raw = {
        "out_dir": os.getenv("LAB_OUT_DIR", "./lab-output"),
        "threads": os.getenv("LAB_THREADS", "1"),
        "samples": os.getenv("LAB_SAMPLES", "100000"),
        "batch_size": os.getenv("LAB_BATCH_SIZE", "4096"),
        "max_steps": os.getenv("LAB_MAX_STEPS", "2000000"),
        "log_level": os.getenv("LAB_LOG_LEVEL", "INFO"),
        "seed": os.getenv("LAB_SEED", "20240101"),
    }
    try:
        return LabSettings(**raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid LAB_* environment: {e}")


settings = load_settings()
