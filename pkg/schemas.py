from decimal import Decimal
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Audit schemas
class AuditRecord(BaseModel):
    name: str
    estimate: Optional[float] = None
    stderr: Optional[float] = None
    bound: Optional[float] = None
    passed: bool
    details: Dict[str, Any] = Field(default_factory=dict)

    model_config = ConfigDict(from_attributes=True)

    def csv_row(self, experiment_id: str) -> Dict[str, Any]:
        return {
            "experiment": experiment_id,
            "audit": self.name,
            "estimate": "" if self.estimate is None else repr(self.estimate),
            "stderr": "" if self.stderr is None else repr(self.stderr),
            "bound": "" if self.bound is None else repr(self.bound),
            "passed": "pass" if self.passed else "fail",
        }


# Geometry schemas
class PointSpec(BaseModel):
    X: List[float]
    t: float


class RectangleSpec(BaseModel):
    lower: List[float]
    sides: List[float]
    t0: float
    time_side: float = Field(gt=0)

    @model_validator(mode="after")
    def _matching_lengths(self):
        if len(self.lower) != len(self.sides):
            raise ValueError("lower and sides must have the same length")
        return self


class ContainerSpec(BaseModel):
    kind: Literal["cube", "box", "ball"]
    cube: Optional[str] = None
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None
    center: Optional[List[float]] = None
    radius: Optional[float] = Field(default=None, gt=0)
    t_lo: Optional[float] = None
    t_hi: Optional[float] = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        if self.kind == "cube" and not self.cube:
            raise ValueError("cube containers need a cube literal 'm:k:j1,...'")
        if self.kind == "box" and (self.lower is None or self.upper is None):
            raise ValueError("box containers need lower and upper corners")
        if self.kind == "ball" and (self.center is None or self.radius is None):
            raise ValueError("ball containers need center and radius")
        return self


class DomainSpec(BaseModel):
    container: ContainerSpec
    obstacles: List[RectangleSpec] = Field(default_factory=list)


class TargetSpec(BaseModel):
    kind: Literal[
        "everything", "nothing", "bottom", "lateral", "obstacles", "cylinder", "ball", "region", "cross-section", "complement"
    ]
    obstacles: Optional[List[int]] = None
    center: Optional[PointSpec] = None
    r: Optional[float] = Field(default=None, gt=0)
    s: Optional[float] = Field(default=None, gt=0)
    region: Optional[RectangleSpec] = None
    axis: Optional[int] = None
    value: Optional[float] = None
    side: Optional[Literal["above", "below"]] = None
    arc: Optional[List[float]] = None
    of: Optional["TargetSpec"] = None


class WalkSpec(BaseModel):
    dt: Optional[float] = Field(default=None, gt=0)
    bisection_tol: float = Field(default=1e-6, gt=0)
    max_steps: Optional[int] = Field(default=None, ge=1)
    batch_size: Optional[int] = Field(default=None, ge=1)
    variance_rate: float = Field(default=2.0, gt=0)
    bridge_correction: bool = True


class GridSetSpec(BaseModel):
    kind: Literal["full", "slab", "product", "percolation", "cubes", "file", "empty"]
    root: Optional[str] = None
    K: int = Field(default=2, ge=0)
    time_row: int = 0
    axes: Optional[List[List[int]]] = None
    p: Optional[float] = Field(default=None, ge=0, le=1)
    seed: Optional[int] = None
    cubes: Optional[List[str]] = None
    path: Optional[str] = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        if self.kind == "file" and not self.path:
            raise ValueError("file GridSets need a path")
        if self.kind != "file" and not self.root:
            raise ValueError(f"{self.kind} GridSets need a root cube literal")
        if self.kind == "percolation" and (self.p is None or self.seed is None):
            raise ValueError("percolation GridSets need p and seed")
        if self.kind == "product" and self.axes is None:
            raise ValueError("product GridSets need per-axis offsets")
        if self.kind == "cubes" and not self.cubes:
            raise ValueError("cube-list GridSets need cube literals")
        return self


# Experiment schemas
STOCHASTIC_SUBCOMMANDS = {"caloric", "bourgain-alt"}


class OutputSpec(BaseModel):
    dir: Optional[str] = None
    csv: str = "results.csv"
    audit: str = "audit.json"
    metadata: str = "metadata.json"


class ExperimentConfig(BaseModel):
    subcommand: Literal["kernel-portrait", "constants", "net-content", "frostman", "dim-tree", "bourgain-alt", "caloric", "suite"]
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    outputs: OutputSpec = Field(default_factory=OutputSpec)
    id: str = "experiment"

    @model_validator(mode="after")
    def _seed_for_stochastic(self):
        if self.subcommand in STOCHASTIC_SUBCOMMANDS and self.seed is None:
            raise ValueError(f"subcommand {self.subcommand!r} is stochastic and needs a seed")
        return self


class CaloricParams(BaseModel):
    audit: Literal["estimate", "survival", "cylinder", "ball", "strong-markov", "nested", "projection"]
    domain: Optional[DomainSpec] = None
    inner_domain: Optional[DomainSpec] = None
    pole: Optional[PointSpec] = None
    target: Optional[TargetSpec] = None
    center: Optional[PointSpec] = None
    r: Optional[float] = Field(default=None, gt=0)
    s: Optional[float] = Field(default=None, gt=0)
    rectangles: Optional[List[RectangleSpec]] = None
    grid_per_axis: int = Field(default=3, ge=1)
    N: Optional[int] = Field(default=None, ge=1)
    walk: WalkSpec = Field(default_factory=WalkSpec)
    half_width: float = Field(default=1.0, gt=0)
    duration: float = Field(default=1.0, gt=0)
    exact: Optional[float] = Field(default=None, ge=0, le=1)


class DimTreeParams(BaseModel):
    gridset: GridSetSpec
    measure: Literal["frostman", "volume"] = "frostman"
    measure_rho: Optional[float] = None
    rho: float = Field(gt=0)
    lam: float = Field(gt=0)
    eps: Optional[float] = Field(default=None, gt=0, lt=1)
    delta_generation: int = Field(ge=1)


class BourgainParams(BaseModel):
    gridset: GridSetSpec
    rho: float
    eta: Optional[float] = Field(default=None, gt=0)
    N: Optional[int] = Field(default=None, ge=1)
    pole_grid: int = Field(default=3, ge=1)
    walk: WalkSpec = Field(default_factory=WalkSpec)


class ConstantsParams(BaseModel):
    n: int = Field(default=1, ge=1)
    alpha: Optional[float] = Field(default=None, ge=1)
    regression: bool = True

    @field_validator("n")
    @classmethod
    def _small_n(cls, value: int) -> int:
        if value > 8:
            raise ValueError("constant search is only supported for n <= 8")
        return value


class ContentParams(BaseModel):
    gridset: GridSetSpec
    rho: float = Field(gt=0)
    delta: Optional[float] = Field(default=None, gt=0)
    rectangles: int = Field(default=0, ge=0)
    seed: int = 0


class PortraitParams(BaseModel):
    n_max: int = Field(default=8, ge=1)
    r_values: List[float] = Field(default_factory=lambda: [0.1, 1.0, 10.0])
    samples: int = Field(default=41, ge=3)


TargetSpec.model_rebuild()


# Constant search reports
class AlphaLedger(BaseModel):
    n: int
    c1: float
    e1_constant: float
    frostman_c: float
    e2_constant: float
    e3_constant: float
    gap: float
    alpha: float


class ConstantsReport(BaseModel):
    n: int
    phase: Literal["scan", "log"]
    m: Optional[int] = None
    log_m: float
    d: int
    q: int
    k: Optional[int] = None
    c: Optional[int] = None
    M: Optional[int] = None
    alpha: float
    eta: float
    log_eta: float
    delta_frac: float
    log_delta_frac: float
    lam: float
    rho: Decimal
    rho_slack: Decimal
    beta: Decimal


class RegressionReport(BaseModel):
    original_n: int
    original_alpha: float
    original_min: float
    original_argmin: int
    original_never_verified: bool
    corrected_n: int
    corrected_alpha: float
    corrected_phase: Literal["scan", "log"]
    corrected_m: Optional[int] = None
    corrected_log_m: float
    precision_gap: float
    passed: bool
