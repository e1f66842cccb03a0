"""
Training configuration and telemetry models.
"""
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.gp import PARAM_GROUPS, Hyperparams


class Method(str, Enum):
    """Gradient estimators available to the training loop."""
    CHOLESKY = "cholesky"
    CG = "cg"
    RR_CG = "rr_cg"
    RFF = "rff"
    SS_RFF = "ss_rff"


class TrainConfig(BaseModel):
    """Optimizer, schedule and estimator knobs for one training run."""
    model_config = ConfigDict(extra="forbid")

    method: Method = Method.CHOLESKY
    iters: int = Field(default=200, ge=1)
    lr: float = Field(default=0.01, gt=0)
    schedule_milestones: List[float] = Field(default_factory=lambda: [0.5, 0.7, 0.9])
    schedule_factor: float = Field(default=0.1, gt=0)
    seed: int = Field(default=0, ge=0)

    # cg / rr_cg
    cg_iters: int = Field(default=20, ge=1, description="Iteration cap J for truncated CG")
    cg_tol: float = Field(default=0.0, ge=0)
    rr_lambda: Optional[float] = Field(default=None, ge=0, description="λ of the exponential truncation")
    rr_j_min: int = Field(default=10, ge=1)
    rr_expected: Optional[float] = Field(default=20.0, gt=0, description="Target E[J]; used when rr_lambda is unset")
    rr_point_mass: bool = Field(default=False, description="Degenerate truncation at J = N")
    probes: int = Field(default=1, ge=1)
    precond_rank: int = Field(default=0, ge=0)

    # rff / ss_rff
    rff_features: int = Field(default=100, ge=2, description="Basis functions J (J/2 frequencies)")
    freeze_features: bool = False
    ss_base_features: int = Field(default=10, ge=1, description="Base frequency pairs J₀")
    ss_step: int = Field(default=1, ge=1)
    ss_dist: str = "harmonic"

    trainable: List[str] = Field(default_factory=lambda: list(PARAM_GROUPS))
    exact_telemetry: Optional[bool] = Field(default=None, description="None: enabled when N is small enough")
    log_every: Optional[int] = Field(default=None, ge=1)

    @field_validator("schedule_milestones")
    @classmethod
    def _milestones_increasing(cls, values: List[float]) -> List[float]:
        previous = 0.0
        for value in values:
            if not previous < value < 1.0:
                raise ValueError("milestones must be strictly increasing within (0, 1)")
            previous = value
        return values

    @field_validator("trainable")
    @classmethod
    def _known_groups(cls, values: List[str]) -> List[str]:
        unknown = set(values) - set(PARAM_GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups: {sorted(unknown)}")
        return values

    @model_validator(mode="after")
    def _even_features(self) -> "TrainConfig":
        if self.rff_features % 2:
            raise ValueError("rff_features counts cos/sin basis functions and must be even")
        return self


class TrainStep(BaseModel):
    """Telemetry for one optimizer step (recorded before the update)."""
    step: int
    lr: float
    theta: List[float]
    objective: Optional[float] = None
    exact_nll: Optional[float] = None
    grad_norm: float
    sampled_j: List[int] = Field(default_factory=list)
    wall_time: float


class TrainRecord(BaseModel):
    """Full training history plus the final hyperparameters."""
    method: Method
    steps: List[TrainStep]
    final_theta: Hyperparams
    final_exact_nll: Optional[float] = None

    def without_timing(self) -> dict:
        """Record contents excluding wall-clock measurements."""
        return self.model_dump(exclude={"steps": {"__all__": {"wall_time"}}})
