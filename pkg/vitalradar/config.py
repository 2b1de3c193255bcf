from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables.

    All settings can be configured via .env file or environment variables.
    Run-specific parameters (radar, scene, training) live in the JSON run
    configuration instead, see schemas.pipeline_schemas.PipelineConfig.
    """

    # Application
    APP_NAME: str = "vital-radar"
    APP_VERSION: str = "0.1.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Runs
    OUTPUT_DIR: str = "runs"
    DEFAULT_SEED: int = 7

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    @property
    def effective_log_level(self) -> str:
        """DEBUG overrides LOG_LEVEL"""
        return "DEBUG" if self.DEBUG else self.LOG_LEVEL.upper()


# Global settings instance
settings = Settings()
