import os
from pathlib import Path


class Config:
    """Configuration management using environment variables"""

    # Worker pool for replica / direction sweeps
    THREADS = int(os.getenv("FPP_THREADS", str(os.cpu_count() or 1)))

    # Capacity budget: sites in the bounding cube of a box
    MAX_BOX_SITES = int(os.getenv("FPP_MAX_BOX_SITES", "8000000"))

    # Solver defaults
    DEFAULT_TOL = float(os.getenv("FPP_DEFAULT_TOL", "1e-9"))
    NU_TOL = float(os.getenv("FPP_NU_TOL", "1e-6"))
    MAX_ITER = int(os.getenv("FPP_MAX_ITER", "100000"))
    NU_MAX_SWEEPS = int(os.getenv("FPP_NU_MAX_SWEEPS", "1000000"))

    # Results storage
    RESULTS_PATH = os.getenv("FPP_RESULTS_PATH", "./results")

    # Logging
    LOG_LEVEL = os.getenv("FPP_LOG_LEVEL", "WARNING")

    @classmethod
    def worker_count(cls) -> int:
        """Threads available to a sweep, never below one"""
        return max(1, cls.THREADS)

    @classmethod
    def ensure_directories(cls):
        """Create necessary directories"""
        Path(cls.RESULTS_PATH).mkdir(parents=True, exist_ok=True)
