from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

OPTIMIZER_SGD = "sgd"
OPTIMIZER_ADAMW = "adamw"


class UnlearnConfig(BaseModel):
    """Hyperparameters of one unlearning run.

    omega_f is always 1 - omega_r. conflict_threshold is the cos(psi) below
    which a step counts as conflicting in the trace.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    omega_r: float = Field(0.6, gt=0, lt=1)
    k: int = Field(6, ge=1)
    lr: float = Field(1e-3, gt=0)
    steps: int = Field(100, ge=0)
    batch_size: int = Field(32, ge=1)
    conflict_threshold: float = Field(-0.02, ge=-1, le=1)
    normalize: bool = True
    optimizer: Literal["sgd", "adamw"] = OPTIMIZER_ADAMW
    init_noise: float = Field(1e-3, ge=0)
    seed: int = 7

    @property
    def omega_f(self) -> float:
        return 1.0 - self.omega_r

    @property
    def retain_batch_size(self) -> int:
        return self.batch_size * self.k
