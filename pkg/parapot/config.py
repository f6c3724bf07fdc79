import sys
import os
import logging
from typing import Any, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field


LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class Settings(BaseModel):
    """Runtime settings shared by every command and campaign check."""

    model_config = ConfigDict(frozen=True)

    log_level: str = "info"
    seed: int = 0
    tol: float = 1e-6
    out_dir: str = "parapot_out"
    threads: int = Field(default=1, ge=1)
    points_per_decade: int = Field(default=64, ge=4)
    subsamples: int = Field(default=4, ge=1)
    morrey_radii: int = Field(default=32, ge=2)
    accept_ratio: float = Field(default=10.0, gt=1.0)

    def conventions(self) -> dict:
        """Boundary and quadrature conventions embedded in every report."""
        return {
            "ball": "open",
            "centered_time_interval": "[t-rho^2/2, t+rho^2/2)",
            "backward_time_interval": "(t-rho^2, t]",
            "slab_density": "zero thickness at grid t0",
            "points_per_decade": self.points_per_decade,
            "overlap_subsamples": self.subsamples,
            "morrey_radii": self.morrey_radii,
            "delta_zero_means": "integrate over (0, R)",
        }


def load_configurations(overrides: Optional[dict[str, Any]] = None) -> Settings:
    load_dotenv()
    values = {
        "log_level": os.getenv("PARAPOT_LOG", "info").lower(),
        "seed": int(os.getenv("PARAPOT_SEED", "0")),
        "tol": float(os.getenv("PARAPOT_TOL", "1e-6")),
        "out_dir": os.getenv("PARAPOT_OUT_DIR", "parapot_out"),
        "threads": int(os.getenv("PARAPOT_THREADS", "1")),
        "points_per_decade": int(os.getenv("PARAPOT_POINTS_PER_DECADE", "64")),
        "subsamples": int(os.getenv("PARAPOT_SUBSAMPLES", "4")),
        "morrey_radii": int(os.getenv("PARAPOT_MORREY_RADII", "32")),
        "accept_ratio": float(os.getenv("PARAPOT_ACCEPT_RATIO", "10")),
    }
    # CLI flags win over the environment
    if overrides:
        values.update({key: value for key, value in overrides.items() if value is not None})
    if values["log_level"] not in LOG_LEVELS:
        logging.warning(f"Unknown PARAPOT_LOG={values['log_level']!r}, falling back to info")
        values["log_level"] = "info"
    return Settings(**values)


def configure_logging(level: str = "info"):
    logging.basicConfig(
        level=LOG_LEVELS.get(level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stdout,
    )
