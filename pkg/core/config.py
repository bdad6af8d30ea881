"""
Application configuration using Pydantic settings.
"""
from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    # Application settings
    app_name: str = "ADR Maintenance Toolkit"
    app_version: str = "0.1.0"
    debug: bool = False

    # Continuation-table cache
    cache_directory: str = "cache/continuation"
    enable_cache: bool = True

    # Variational Bayes settings
    vb_tolerance: float = 1e-8
    vb_max_iterations: int = 500
    quadrature_half_width: int = 3  # L points per side, 2L+1 total

    # Value iteration settings
    vi_tolerance: float = 1e-9
    vi_max_iterations: int = 100_000
    tie_tolerance: float = 1e-9  # ties between actions resolve toward repair

    # Whittle index settings
    whittle_epsilon_relative: float = 1e-3  # epsilon = this * lambda
    doubling_cap_exponent: int = 40
    isotonic_clip_cells: int = 1

    # Parallelism
    default_threads: int = 1

    # Logging settings
    log_level: str = "INFO"
    log_format: str = "text"  # json or text

    # Log rotation settings
    enable_file_logging: bool = False
    log_directory: str = "logs"
    log_file_max_size_mb: int = 10  # Max size per log file in MB
    log_file_backup_count: int = 5  # Number of backup files to keep
    log_compression: bool = True  # Compress old log files

    # Separate log files for different components
    app_log_file: str = "app.log"
    error_log_file: str = "error.log"
    solver_log_file: str = "solver.log"
    whittle_log_file: str = "whittle.log"
    fleet_log_file: str = "fleet.log"

    # Optional scenario used when --scenario is omitted
    default_scenario: Optional[str] = None

    class Config:
        env_file = ".env"
        case_sensitive = False


# Global settings instance
settings = Settings()
