from typing import Optional
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix VLV_)"""

    # Run defaults
    seed: int = 7
    work_dir: str = "artifacts"
    jobs: int = 1
    log_level: str = "INFO"
    config_file: Optional[str] = None  # Optional flat key = value overrides

    # FastAPI Configuration
    app_name: str = "Value Learning Lab"
    app_version: str = "1.0.0"
    debug: bool = False

    # API Configuration
    api_v1_prefix: str = "/api/v1"
    cors_origins: list[str] = ["*"]

    class Config:
        env_file = ".env"
        env_prefix = "VLV_"
        case_sensitive = False
        extra = "ignore"


# Global settings instance
settings = Settings()
