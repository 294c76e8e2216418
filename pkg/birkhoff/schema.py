from pydantic import BaseModel, ConfigDict, Field
from typing import List, Dict, Literal, Optional, Any


class PressureEstimate(BaseModel):
    value: float = Field(..., description="Least-squares slope of log partition sums against n")
    n_range: List[int] = Field(..., description="Word lengths requested")
    fit_range: List[int] = Field(..., description="Word lengths used by the slope fit")
    log_sums: List[Optional[float]] = Field(..., description="log partition sum per n (None when the level is empty)")
    residual: float = Field(..., description="RMS residual of the slope fit")
    counts: Optional[List[int]] = Field(None, description="Words contributing per n")
    skipped: List[int] = Field(default_factory=list, description="Word lengths with an empty level")
    method: str = "counting"


class RotationInterval(BaseModel):
    alpha_min: float
    alpha_max: float
    min_cycle: List[int] = Field(..., description="Periodic word realizing alpha_min")
    max_cycle: List[int] = Field(..., description="Periodic word realizing alpha_max")
    exact: bool = Field(True, description="Computed over exact rationals")

    @property
    def degenerate(self) -> bool:
        return abs(self.alpha_max - self.alpha_min) <= 1e-12


class SpectrumCurve(BaseModel):
    alphas: List[float]
    values: List[Optional[float]] = Field(..., description="F(alpha); None where undefined")
    q_opt: List[Optional[float]] = Field(..., description="Legendre optimizer per alpha")
    feasible: List[bool]
    endpoint: List[bool] = Field(default_factory=list, description="alpha at an end of the rotation interval")
    method: str = "legendre"
    note: str = ""


class VariationalResult(BaseModel):
    alpha: float
    value: float = Field(..., description="entropy + integral of psi at the optimum")
    entropy: float
    psi_integral: float
    phi_integral: float
    matrix: List[List[float]] = Field(..., description="Achieving stochastic matrix")
    grid_points: int = Field(..., description="Grid matrices evaluated")
    feasible_points: int = Field(..., description="Grid matrices within the constraint slack")
    refined: bool = Field(False, description="Local search improved on the grid optimum")


class FamilyCheck(BaseModel):
    level: int
    length: int
    size: int
    log_partition: float
    per_symbol: float = Field(..., description="(1/n) log M")
    target: float = Field(..., description="C - gamma")
    passed: bool


class LevelCheck(BaseModel):
    level: int
    length: int = Field(..., description="t_k")
    max_deviation: float
    bound: float
    passed: bool


class ConvergenceReport(BaseModel):
    levels: List[LevelCheck]
    samples: int
    deviations_decreasing: bool
    bounds_decreasing: bool
    passed: bool


class SeparationLevel(BaseModel):
    level: int
    mode: str = Field(..., description="exhaustive or factorized")
    leaves: int
    separated: bool
    nested: Optional[bool] = Field(None, description="None when nesting is vacuous")
    witness: Optional[List[List[int]]] = None


class SeparationReport(BaseModel):
    levels: List[SeparationLevel]
    nesting_vacuous: bool
    passed: bool


class PdpReport(BaseModel):
    s: float
    log_k: float = Field(..., description="Fitted log K, K >= 1")
    max_log_violation: float = Field(..., description="max over balls of log mu - log bound - log K")
    per_depth: Dict[int, float] = Field(default_factory=dict, description="Max raw log violation per depth")
    balls_checked: int
    balls_skipped: int
    n_max: int
    passed: bool


class MoranReport(BaseModel):
    alpha: float
    gamma: float
    target_constant: float = Field(..., description="C = h + integral of psi for the optimal measure")
    gap: int
    families: List[FamilyCheck]
    threshold_length: Optional[int] = Field(None, description="Smallest n_k from which every family check passes")
    schedules: Dict[str, List[int]]
    leaf_counts: List[int]
    kappa_log: float
    kappa_check: Optional[float] = Field(None, description="|log sum of leaf weights - log kappa| when eager")
    consistency_error: float = Field(..., description="Max |mu_k+1 - mu_k| on depth t_k cylinders")
    factorization_error: Optional[float] = Field(None, description="Max |factorized - brute force| cylinder mass")
    separation: SeparationReport
    convergence: ConvergenceReport
    pdp: PdpReport
    passed: bool


class HistogramReport(BaseModel):
    centers: List[float]
    counts: List[int]
    fractions: List[float]
    rates: List[Optional[float]] = Field(..., description="-(1/n) log(fraction / modal fraction)")
    raw_rates: List[Optional[float]] = Field(..., description="-(1/n) log fraction")
    n: int
    ensemble_size: int
    escaped: int = 0
    seed: int
    heuristic: bool = True


class GapReport(BaseModel):
    found: bool
    gap: Optional[int] = None
    witness: Optional[float] = None
    verified: bool = False
    epsilon: float
    p_max: int
    segment_lengths: List[int]
    diagnostics: List[Dict[str, Any]] = Field(default_factory=list)


class SweepReport(BaseModel):
    lengths: List[int]
    gaps: List[Optional[int]]
    ratios: List[Optional[float]] = Field(..., description="p(n)/n")
    nonincreasing: bool


class RunManifest(BaseModel):
    command: str
    version: str
    config: Dict[str, Any] = Field(..., description="Resolved run configuration")
    settings: Dict[str, Any]
    input_sha256: str
    outputs: List[str]
    wall_time: float
    status: str = "success"


class RunConfig(BaseModel):
    command: Literal["pressure", "spectrum", "moran-verify", "bs-dim", "maps", "spec-gap"]
    config_path: str
    out_dir: str
    seed: Optional[int] = None
    tol: Optional[float] = Field(None, gt=0.0, description="Overrides power_tol and bisection_tol")
    nmax: Optional[int] = Field(None, ge=3)
    workers: Optional[int] = Field(None, ge=1)

    model_config = ConfigDict(extra="forbid")
