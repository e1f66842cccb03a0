"""
Experiment configuration and report models.
"""
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from src.models.gp import Hyperparams
from src.models.training import TrainConfig


# ==================== Data sources ====================

class ToySineSource(BaseModel):
    """y = x·sin(5πx) + ε on a uniform grid over [0, 1]."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["toy_sine"] = "toy_sine"
    n: int = Field(default=100, ge=2)
    noise_sd: float = Field(default=0.1, ge=0)
    seed: int = Field(default=0, ge=0)


class GPPriorSource(BaseModel):
    """A draw from a GP prior at uniform random inputs on [low, high]^d."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["gp_prior"] = "gp_prior"
    n: int = Field(default=300, ge=1)
    d: int = Field(default=1, ge=1)
    theta: Hyperparams = Field(default_factory=lambda: Hyperparams(outputscale_sq=1.0, lengthscales=[0.2], noise_sq=0.01))
    low: float = 0.0
    high: float = 1.0
    seed: int = Field(default=0, ge=0)


class CsvSource(BaseModel):
    """A rectangular numeric CSV with a header row."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["csv"] = "csv"
    path: str
    target_column: str
    standardize: bool = True


DataSource = Annotated[Union[ToySineSource, GPPriorSource, CsvSource], Field(discriminator="kind")]


class RunConfig(BaseModel):
    """JSON document driving ``train`` (and ``gen-data``)."""
    model_config = ConfigDict(extra="forbid")

    data: DataSource
    theta0: Optional[Hyperparams] = None
    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: str = "runs/latest"
    record_csv: str = "train_record.csv"
    theta_json: str = "theta.json"
    manifest: str = "manifest.json"


class InstanceSpec(BaseModel):
    """A small synthetic GP instance with exact references."""
    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=40, ge=2)
    d: int = Field(default=1, ge=1)
    outputscale_sq: float = Field(default=1.0, gt=0)
    lengthscale: float = Field(default=0.3, gt=0)
    noise_sq: float = Field(default=0.1, gt=0)
    seed: int = Field(default=0, ge=0)

    def theta(self) -> Hyperparams:
        return Hyperparams(outputscale_sq=self.outputscale_sq, lengthscales=[self.lengthscale], noise_sq=self.noise_sq)


# ==================== Reports ====================

class BiasSweepRow(BaseModel):
    """Replica statistics of one (method, J) cell."""
    method: str
    j: float
    logdet_mean: float
    logdet_se: float
    invquad_mean: float
    invquad_se: float
    replicas: int


class BiasSweepReport(BaseModel):
    n: int
    exact_logdet: float
    exact_invquad: float
    replicas: int
    rows: List[BiasSweepRow]

    def row(self, method: str, j: float) -> BiasSweepRow:
        for row in self.rows:
            if row.method == method and row.j == j:
                return row
        raise KeyError((method, j))


class LengthscaleRow(BaseModel):
    """Learned lengthscale of one method/J/seed against the Cholesky reference."""
    method: str
    j: Optional[int] = None
    seed: int
    lengthscale: float
    reference_lengthscale: float
    log_ratio: float


class EstimatorOutput(BaseModel):
    name: str
    mean: float
    se: float
    exact: float
    z: float


class EstimatorCheckReport(BaseModel):
    kind: str
    mode: Literal["enumeration", "monte_carlo"]
    replicas: int
    outputs: List[EstimatorOutput]
    passed: bool


# ==================== Experiment configs ====================

class TruncationSpec(BaseModel):
    """Serializable description of a truncation distribution; unset bounds take instance defaults."""
    model_config = ConfigDict(extra="forbid")

    family: Literal["exponential", "mean_exponential", "harmonic", "uniform", "point"] = "exponential"
    lam: float = Field(default=0.1, ge=0)
    target_mean: Optional[float] = Field(default=None, gt=0)
    j_min: int = Field(default=1, ge=1)
    h: Optional[int] = Field(default=None, ge=1)


class BiasSweepConfig(BaseModel):
    """JSON document driving ``bias-sweep``."""
    model_config = ConfigDict(extra="forbid")

    data: DataSource = Field(default_factory=GPPriorSource)
    theta: Optional[Hyperparams] = None
    methods: List[Literal["cg", "rr_cg", "rff", "ss_rff"]] = Field(default_factory=lambda: ["cg", "rr_cg", "rff", "ss_rff"])
    j_grid: List[float] = Field(default_factory=lambda: [10, 20, 40, 80])
    grids: dict = Field(default_factory=dict, description="Per-method grid overrides")
    replicas: int = Field(default=500, ge=2)
    rr_j_min: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)


class LengthscaleStudyConfig(BaseModel):
    """JSON document driving ``lengthscale-bias``."""
    model_config = ConfigDict(extra="forbid")

    cg_grid: List[int] = Field(default_factory=lambda: [5, 15, 45])
    rff_grid: List[int] = Field(default_factory=lambda: [20, 100, 500])
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    n: int = Field(default=100, ge=2)
    noise_sd: float = Field(default=0.1, gt=0)
    data_seed: int = Field(default=0, ge=0)
    iters: int = Field(default=200, ge=1)
    lr: float = Field(default=0.05, gt=0)
    probes: int = Field(default=8, ge=1)
    perturbation: float = Field(default=1.5, gt=0, description="ℓ start as a multiple of the Cholesky optimum")


class EstimatorCheckConfig(BaseModel):
    """Arguments of one estimator check."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["rr", "ss", "rr_cg_solve", "rr_cg_grad", "ss_rff_mll"]
    replicas: int = Field(default=2000, ge=2)
    dist: Optional[TruncationSpec] = None
    instance: InstanceSpec = Field(default_factory=InstanceSpec)
    seed: int = Field(default=0, ge=0)
    enumeration: Optional[bool] = Field(default=None, description="None: enumerate when the budget allows")
    shared_solve: bool = Field(default=False, description="Biased negative control for rr_cg_grad")
    ss_base_features: int = Field(default=1, ge=1)
