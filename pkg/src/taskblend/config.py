"""Experiment and sweep file schemas (JSON), validated before anything runs."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .problems import LandscapeProblem, QuadraticTaskFamily, ToyMLPProblem
from .sampling import KINDS as DISTRIBUTIONS, POINT_MASS
from .strategies import KINDS as STRATEGIES, make_strategy
from .trainer import OPTIMIZER_KINDS, OptimizerSpec, TrainConfig

StrategyKind = Literal["ew", "rlw", "gradnorm", "uw", "mgda", "dwa", "pcgrad", "graddrop",
                       "imtl_g", "imtl_l", "imtl", "gradvac"]
DistributionKind = Literal["uniform", "normal", "dirichlet", "bernoulli", "constrained_bernoulli",
                           "random_normal", "point_mass"]
assert set(StrategyKind.__args__) == set(STRATEGIES)
assert set(DistributionKind.__args__) == set(DISTRIBUTIONS) | {POINT_MASS}


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class QuadraticConfig(_Strict):
    family: Literal["quadratic"] = "quadratic"
    T: int = Field(3, ge=1)
    d: int = Field(10, ge=1)
    n: int = Field(200, ge=1)
    B: int = Field(8, ge=1)
    sigma_data: float = Field(1.0, ge=0)
    center_scale: float = Field(1.0, ge=0)
    curvatures: list[float] | None = None
    data_seed: int = 0

    @model_validator(mode="after")
    def _curvatures(self):
        if self.curvatures is not None and (len(self.curvatures) != self.T or min(self.curvatures) <= 0):
            raise ValueError("curvatures needs T positive entries")
        return self


class ToyMLPConfig(_Strict):
    family: Literal["toy_mlp"] = "toy_mlp"
    T: int = Field(3, ge=1)
    d: int = Field(4, ge=1, description="input dimension")
    n: int = Field(256, ge=1)
    B: int = Field(16, ge=1)
    hidden: int = Field(8, ge=1)
    d_out: int = Field(1, ge=1)
    noise: float = Field(0.1, ge=0)
    data_seed: int = 0


class LandscapeConfig(_Strict):
    family: Literal["landscape"] = "landscape"
    T: int = Field(2, ge=1)
    d: Literal[1] = 1
    n: int = Field(512, ge=1)
    B: int = Field(4, ge=1)
    tilt: float = 6.0
    sigma_data: float = Field(13.0, ge=0)
    confinement: float = 0.1
    sharp_center: float = 0.0
    sharp_width: float = Field(0.2, gt=0)
    sharp_depth: float = Field(1.0, gt=0)
    flat_center: float = 3.0
    flat_width: float = Field(1.0, gt=0)
    flat_depth: float = Field(2.0, gt=0)
    init_center: float | None = None
    init_radius: float = Field(0.05, ge=0)
    data_seed: int = 0


ProblemConfig = Annotated[Union[QuadraticConfig, ToyMLPConfig, LandscapeConfig], Field(discriminator="family")]


class StrategyConfig(_Strict):
    kind: StrategyKind
    params: dict[str, Any] = Field(default_factory=dict)


class OptimizerConfig(_Strict):
    kind: Literal["sgd_fixed", "sgd_decreasing", "adam"] = "sgd_fixed"
    lr: float = Field(0.01, gt=0)
    alpha_step: float = Field(1.0, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)

    def spec(self) -> OptimizerSpec:
        return OptimizerSpec(**self.model_dump())


assert set(OptimizerConfig.model_fields["kind"].annotation.__args__) == set(OPTIMIZER_KINDS)


class RunSettings(_Strict):
    iterations: int = Field(ge=0)
    seed: int | list[int] = 0
    log_stride: int = Field(1, ge=1)
    output_dir: str = "out"

    @field_validator("seed")
    @classmethod
    def _seeds(cls, v):
        if isinstance(v, list) and not v:
            raise ValueError("seed list must not be empty")
        return v

    @property
    def seeds(self) -> list[int]:
        return list(self.seed) if isinstance(self.seed, list) else [self.seed]


class ExperimentConfig(_Strict):
    problem: ProblemConfig
    strategy: StrategyConfig
    distribution: DistributionKind | None = None
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    run: RunSettings

    @model_validator(mode="after")
    def _strategy_params(self):
        try:
            make_strategy(self.strategy.kind, self.problem.T, self.strategy.params, self.distribution)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"strategy.params: {exc}") from None
        return self

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            iterations=self.run.iterations,
            batch_size=self.problem.B,
            seed=self.run.seeds[0] if seed is None else seed,
            strategy=self.strategy.kind,
            strategy_params=dict(self.strategy.params),
            distribution=self.distribution,
            optimizer=self.optimizer.spec(),
            log_stride=self.run.log_stride,
        )


class StrategyAxisEntry(_Strict):
    kind: StrategyKind
    params: dict[str, Any] = Field(default_factory=dict)


class SweepAxes(_Strict):
    strategies: list[StrategyKind | StrategyAxisEntry] = Field(min_length=1)
    distributions: list[DistributionKind] | None = Field(None, min_length=1)
    seeds: list[int] = Field(min_length=1)


class SweepManifest(_Strict):
    base: ExperimentConfig
    axes: SweepAxes

    def cells(self) -> list[tuple[str, ExperimentConfig]]:
        """Expand the cross product; distributions only multiply RLW cells."""
        out = []
        base = self.base.model_dump()
        for entry in self.axes.strategies:
            strat = entry if isinstance(entry, StrategyAxisEntry) else StrategyAxisEntry(kind=entry)
            dists = [None]
            if strat.kind == "rlw":
                dists = self.axes.distributions or [self.base.distribution or "normal"]
            for dist in dists:
                for seed in self.axes.seeds:
                    cfg = dict(base)
                    cfg["strategy"] = strat.model_dump()
                    cfg["distribution"] = dist
                    cfg["run"] = {**base["run"], "seed": seed}
                    label = strat.kind if dist is None else f"{strat.kind}-{dist}"
                    out.append((f"{label}-seed{seed}", ExperimentConfig.model_validate(cfg)))
        names = [n for n, _ in out]
        if len(set(names)) != len(names):
            raise ValueError("sweep cells have duplicate names; list each strategy once")
        return out


def _read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def load_config(path) -> ExperimentConfig:
    return parse_config(_read_json(path))


def parse_config(data: Any) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_manifest(path) -> SweepManifest:
    data = _read_json(path)
    try:
        manifest = SweepManifest.model_validate(data)
        manifest.cells()
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return manifest


def dump_config(cfg: ExperimentConfig) -> str:
    return cfg.model_dump_json(indent=2)


def build_problem(cfg) -> Any:
    if isinstance(cfg, QuadraticConfig):
        return QuadraticTaskFamily.generate(cfg.T, cfg.d, cfg.n, sigma_data=cfg.sigma_data,
                                            center_scale=cfg.center_scale, curvatures=cfg.curvatures,
                                            seed=cfg.data_seed)
    if isinstance(cfg, ToyMLPConfig):
        return ToyMLPProblem.generate(cfg.T, cfg.d, cfg.hidden, cfg.d_out, cfg.n, noise=cfg.noise, seed=cfg.data_seed)
    if isinstance(cfg, LandscapeConfig):
        shape = cfg.model_dump(exclude={"family", "T", "d", "n", "B", "tilt", "sigma_data", "data_seed"})
        try:
            return LandscapeProblem.generate(cfg.T, cfg.n, tilt=cfg.tilt, sigma_data=cfg.sigma_data,
                                             seed=cfg.data_seed, **shape)
        except RuntimeError as exc:
            raise ConfigError(f"problem: {exc}") from None
    raise TypeError(f"unsupported problem config {type(cfg).__name__}")
