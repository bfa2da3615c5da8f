"""
Configuration settings for HardyLab
"""
import os

from dotenv import load_dotenv

load_dotenv()


class Settings:
    """Application settings"""

    # Project
    PROJECT_NAME: str = "HardyLab"
    VERSION: str = "1.0.0"
    CONFIG_SCHEMA_VERSION: int = 1

    # Numerics
    TOLERANCE: float = float(os.getenv("HARDYLAB_TOLERANCE", "1e-9"))
    MEASURE_TOLERANCE: float = float(os.getenv("HARDYLAB_MEASURE_TOLERANCE", "1e-12"))
    MAX_GRID_POINTS: int = int(os.getenv("HARDYLAB_MAX_GRID_POINTS", str(2 ** 22)))
    MAX_ENVELOPE_CANDIDATES: int = int(os.getenv("HARDYLAB_MAX_ENVELOPE_CANDIDATES", "2000000"))

    # Experiments
    DEFAULT_SEED: int = int(os.getenv("HARDYLAB_SEED", "0"))
    DEFAULT_TRIALS: int = int(os.getenv("HARDYLAB_TRIALS", "100"))
    OUTPUT_DIR: str = os.getenv("HARDYLAB_OUTPUT_DIR", "results")
    WORKERS: int = int(os.getenv("HARDYLAB_WORKERS", "1"))
    DEPTH_GROWTH_FACTOR: float = float(os.getenv("HARDYLAB_DEPTH_GROWTH_FACTOR", "2.0"))

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Development
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"


# Create settings instance
settings = Settings()
