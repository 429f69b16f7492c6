"""Pipeline configuration: one JSON document, schema-checked before any work starts."""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .assembly import N_LENSES, AssemblyParams
from .dataset import RNG_ALGORITHM
from .propagate import DEFAULT_LOWER, DEFAULT_UPPER
from .surrogate import NetworkConfig

Evaluator = Literal["surrogate", "direct-model"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_box(lower, upper):
    if len(lower) != N_LENSES or len(upper) != N_LENSES:
        raise ValueError(f"ranges need {N_LENSES} lower and {N_LENSES} upper bounds")
    bad = [i for i, (lo, hi) in enumerate(zip(lower, upper)) if not lo < hi]
    if bad:
        raise ValueError(f"lower must be < upper for input(s) {bad}")


class ContactSection(_Strict):
    p0: float = 5.0
    c0: float = 3.5


class NewtonSection(_Strict):
    max_iters: int = 50
    tol: float = 1e-10
    max_line_search_halvings: int = 30


class AssemblySection(_Strict):
    contact: ContactSection = ContactSection()
    k_r: float = 1.0
    q_r: float = 0.05
    k_z: float = 1.0
    q_z: float = 0.02
    gamma: float = 0.08
    kappa: float = 0.3
    nu: float = 0.8
    rho: float = 0.25
    a_obs: float = 0.15
    b_obs: float = 0.1
    newton: NewtonSection = NewtonSection()

    @model_validator(mode="after")
    def _physical(self):
        self.to_params()
        return self

    def to_params(self) -> AssemblyParams:
        return AssemblyParams.from_dict(self.model_dump())


class DatasetSection(_Strict):
    """Either explicit ``n_train``/``n_test`` counts or ``n_samples`` with ``train_fraction``."""

    n_train: Optional[int] = Field(2500, ge=1)
    n_test: Optional[int] = Field(300, ge=1)
    n_samples: Optional[int] = Field(None, ge=10)
    train_fraction: Optional[float] = Field(None, gt=0, lt=1)
    lower: List[float] = [2.0] * N_LENSES
    upper: List[float] = [5.0] * N_LENSES
    seed: int = 1
    split_seed: int = 2

    @model_validator(mode="after")
    def _mode(self):
        _check_box(self.lower, self.upper)
        counts = self.n_train is not None and self.n_test is not None
        fraction = self.n_samples is not None and self.train_fraction is not None
        if counts == fraction:
            raise ValueError("give either n_train and n_test, or n_samples and train_fraction "
                             "(set the unused pair to null)")
        return self

    @property
    def size(self) -> int:
        return self.n_train + self.n_test if self.n_train is not None else self.n_samples


class NetworkSection(_Strict):
    hidden_layers: int = 10
    hidden_width: int = 200
    dropout: float = 0.1
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 64
    validation_split: float = 0.1
    seed: int = 0
    dropout_layers: Literal["last", "all"] = "last"

    @model_validator(mode="after")
    def _valid(self):
        self.to_config()
        return self

    def to_config(self) -> NetworkConfig:
        return NetworkConfig(**self.model_dump())


class SobolSection(_Strict):
    n_start: int = Field(100, ge=2)
    n_max: int = 200_000
    growth_factor: Literal[2] = 2
    lower: List[float] = [2.0] * N_LENSES
    upper: List[float] = [5.0] * N_LENSES
    seed: int = 3
    evaluator: Evaluator = "surrogate"

    @model_validator(mode="after")
    def _valid(self):
        _check_box(self.lower, self.upper)
        if self.n_max < self.n_start:
            raise ValueError("n_max must be >= n_start")
        return self


class PropagateSection(_Strict):
    n_final: int = Field(12800, ge=2)
    n_start: int = Field(100, ge=2)
    n_bins: int = Field(40, ge=1)
    lower: List[float] = list(DEFAULT_LOWER)
    upper: List[float] = list(DEFAULT_UPPER)
    seed: int = 4
    evaluator: Evaluator = "surrogate"

    @model_validator(mode="after")
    def _valid(self):
        _check_box(self.lower, self.upper)
        if self.n_final < self.n_start:
            raise ValueError("n_final must be >= n_start")
        return self


class PipelineConfig(_Strict):
    rng: Literal["PCG64"] = RNG_ALGORITHM
    output_dir: str = "run"
    workers: int = Field(1, ge=1)
    assembly: AssemblySection = AssemblySection()
    dataset: DatasetSection = DatasetSection()
    network: NetworkSection = NetworkSection()
    sobol: SobolSection = SobolSection()
    propagate: PropagateSection = PropagateSection()

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Derive every stage seed from one base seed."""
        return self.model_copy(update={
            "dataset": self.dataset.model_copy(update={"seed": seed, "split_seed": seed + 1}),
            "network": self.network.model_copy(update={"seed": seed + 2}),
            "sobol": self.sobol.model_copy(update={"seed": seed + 3}),
            "propagate": self.propagate.model_copy(update={"seed": seed + 4}),
        })

    def with_evaluator(self, evaluator: str) -> "PipelineConfig":
        return PipelineConfig.model_validate({
            **self.model_dump(),
            "sobol": {**self.sobol.model_dump(), "evaluator": evaluator},
            "propagate": {**self.propagate.model_dump(), "evaluator": evaluator},
        })

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n"


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {where}: {err['msg']}")
    return "invalid config:\n" + "\n".join(lines)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def parse_config(doc) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
