import logging
import os
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigError

load_dotenv()

DEFAULT_MASTER_SEED = 20190101


class Settings(BaseModel):
    """Process-wide knobs read from the environment (and `.env`)."""

    workers: int = Field(1, ge=1)
    output_dir: str = "data/runs"
    log_level: str = "INFO"
    master_seed: int = Field(DEFAULT_MASTER_SEED, ge=0)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    try:
        return Settings(
            workers=os.getenv("BDGLAB_WORKERS", "1"),
            output_dir=os.getenv("BDGLAB_OUTPUT_DIR", "data/runs"),
            log_level=os.getenv("BDGLAB_LOG_LEVEL", "INFO").upper(),
            master_seed=os.getenv("BDGLAB_MASTER_SEED", str(DEFAULT_MASTER_SEED)),
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid BDGLAB_* environment: {e}") from e


def resolve_workers(workers: int | None) -> int:
    """Explicit worker count wins; otherwise BDGLAB_WORKERS."""
    if workers is None:
        return get_settings().workers
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    return workers


def ensure_dir(p: str) -> str:
    os.makedirs(p, exist_ok=True)
    return p


def configure_logging(level: str | None = None) -> None:
    """Install a rich console handler on the root logger (CLI entry points only)."""
    from rich.logging import RichHandler

    level = (level or get_settings().log_level).upper()
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )
