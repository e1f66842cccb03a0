"""
Application settings loaded from the environment.
"""
import logging
import os
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from src import __version__

# Load environment variables
load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Settings(BaseModel):
    """Process-wide configuration."""
    app_name: str = "Debiased GP"
    app_version: str = __version__
    app_host: str = "0.0.0.0"
    app_port: int = Field(default=8000, ge=1, le=65535)
    log_level: str = "INFO"
    default_seed: int = Field(default=0, ge=0)
    threads: int = Field(default=1, ge=1)
    exact_telemetry_max_n: int = Field(default=1500, ge=1)
    debug_errors: bool = False

    @classmethod
    def from_env(cls) -> "Settings":
        """Build settings from environment variables."""
        return cls(
            app_name=os.getenv("APP_NAME", "Debiased GP"),
            app_version=os.getenv("APP_VERSION", __version__),
            app_host=os.getenv("APP_HOST", "0.0.0.0"),
            app_port=int(os.getenv("APP_PORT", 8000)),
            log_level=os.getenv("LOG_LEVEL", "INFO").upper(),
            default_seed=int(os.getenv("GP_DEFAULT_SEED", 0)),
            threads=int(os.getenv("GP_THREADS", 1)),
            exact_telemetry_max_n=int(os.getenv("GP_EXACT_TELEMETRY_MAX_N", 1500)),
            debug_errors=os.getenv("GP_DEBUG_ERRORS", "false").lower() == "true",
        )


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Cached settings instance."""
    return Settings.from_env()


def configure_logging(level: str | None = None) -> None:
    """Install a single stream handler on the root logger."""
    level = (level or get_settings().log_level).upper()
    root = logging.getLogger()
    if not any(getattr(h, "_gp_lab", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._gp_lab = True
        root.addHandler(handler)
    root.setLevel(level)
