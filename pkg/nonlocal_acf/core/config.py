"""
Application configuration settings.
"""
import os

from pydantic import field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings."""

    # Project info
    PROJECT_NAME: str = "nonlocal-acf"
    PROJECT_DESCRIPTION: str = "Fractional ACF functionals, nonlocal operators and their numerical checks"
    PROJECT_VERSION: str = "0.3.0"

    # Point cache settings
    NONLOCAL_ACF_CACHE_DIR: str = ".nonlocal_acf_cache"
    USE_PERSISTENT_CACHE: bool = False
    CACHE_QUANTUM: float = 1e-9

    # Runner settings
    DEFAULT_JOBS: int = 1
    DEFAULT_SEED: int = 12345
    LOG_LEVEL: str = "INFO"

    # Report settings
    REPORT_SCHEMA_VERSION: str = "1.0"

    @field_validator("NONLOCAL_ACF_CACHE_DIR")
    def resolve_cache_dir(cls, v: str, info):
        if os.path.isabs(v):
            return v
        base_dir = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
        return os.path.join(base_dir, v)

    @field_validator("CACHE_QUANTUM")
    def check_quantum(cls, v: float, info):
        if v <= 0:
            raise ValueError("CACHE_QUANTUM must be positive")
        return v

    @field_validator("DEFAULT_JOBS")
    def check_jobs(cls, v: int, info):
        if v < 1:
            raise ValueError("DEFAULT_JOBS must be at least 1")
        return v

    @property
    def cache_db_url(self) -> str:
        return "sqlite:///" + os.path.join(self.NONLOCAL_ACF_CACHE_DIR, "points.db")

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True


# Create a global settings instance
settings = Settings()
