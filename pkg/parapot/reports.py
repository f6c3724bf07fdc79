import json
import math
from typing import Any, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field


class VerificationReport(BaseModel):
    """Structured record of one empirical check.

    samples holds one dict per sampled row (a tidy table); profile_columns names
    the columns that emit_profile writes, in order.
    """

    model_config = ConfigDict(populate_by_name=True, ser_json_inf_nan="constants")

    check: str
    params: dict[str, Any] = {}
    fitted_constants: dict[str, float] = {}
    worst_ratio: Optional[float] = None
    passed: bool = Field(default=False, alias="pass")
    status: str = "ok"
    samples: list[dict[str, Any]] = []
    profile_columns: list[str] = []
    conventions: dict[str, Any] = {}
    seed: Optional[int] = None

    def to_json(self) -> str:
        payload = json.loads(self.model_dump_json(by_alias=True))
        return json.dumps(payload, sort_keys=True, indent=2)

    def summary(self) -> dict:
        return {"check": self.check, "pass": self.passed, "status": self.status, "worst_ratio": self.worst_ratio}

    def profile_frame(self) -> pd.DataFrame:
        columns = self.profile_columns or sorted({key for row in self.samples for key in row})
        return pd.DataFrame([{c: row.get(c) for c in columns} for row in self.samples], columns=columns)


def finite_or_none(value) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def safe_ratio(num: float, den: float) -> Optional[float]:
    """num/den with 0/0 -> None and x/0 -> inf."""
    if den == 0:
        return None if num == 0 else math.inf
    return num / den
