#!/usr/bin/env python3
"""
Run Configuration

Flat key=value files read with python-dotenv. Grammar:

    # comment
    method=block-admm
    layers=784,128,128,10        # lists are comma-separated
    beta=1                       # one value for all blocks, or one per block
    verbose=true                 # booleans: true / false

Unknown keys are rejected by name. Values are coerced to the field type,
then `validate()` checks ranges before any run.
"""

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import dotenv_values

from modules.baseline.backprop import BaselineConfig
from modules.block_admm.batch import BatchAdmmConfig
from modules.block_admm.online import PENALTY_FORMS, OnlineAdmmConfig
from modules.blocks.layers import ACTIVATIONS, INIT_KINDS
from modules.data.synth import SYNTH_KINDS, SynthSpec
from modules.errors import ConfigError
from modules.losses.objectives import LOSS_KINDS
from modules.nmf.facto import NMF_INITS, DeepFactoConfig
from modules.schedule.penalty import ConvergenceConfig, PenaltySchedule
from modules.standard_admm.train import StandardAdmmConfig
from modules.tensor.optim import OPTIMIZERS

METHODS = ("block-admm", "online", "standard-admm", "sgd", "adam", "deepfacto", "convergence")
DATASETS = ("idx", "synth", "npz")
DATA_PATH_ENV = "BLOCKADMM_DATA_PATH"


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _per_block(text: str) -> float | list[float]:
    values = _float_list(text)
    if not values:
        raise ValueError("expected at least one number")
    return values[0] if len(values) == 1 else values


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered not in ("true", "false"):
        raise ValueError(f"expected true or false, got '{text}'")
    return lowered == "true"


def _parser(kind):
    return {"parse": kind}


@dataclass
class TrainConfig:
    method: str = "block-admm"
    seed: int = 0
    epochs: int = 100
    verbose: bool = field(default=True, metadata=_parser(_bool))

    # network
    layers: list[int] = field(
        default_factory=lambda: [784, 128, 128, 10], metadata=_parser(_int_list)
    )
    boundaries: list[int] = field(default_factory=list, metadata=_parser(_int_list))
    bias: bool = field(default=False, metadata=_parser(_bool))
    init: str = "normal"
    activation: str = "relu"
    loss: str = "mse"

    # block-ADMM
    beta: float | list[float] = field(default=1.0, metadata=_parser(_per_block))
    z_lr: float | list[float] = field(default=0.5, metadata=_parser(_per_block))
    theta_lr: float | list[float] = field(default=5e-3, metadata=_parser(_per_block))
    primal_steps: int = 3
    batch_size: int = 64
    theta_batches: int = 0
    z_optimizer: str = "sgd"
    theta_optimizer: str = "adam"
    repeat: str = "sweep"
    dual_init: str = "uniform"
    penalty_form: str = "norm-plus-dual"

    # standard ADMM
    admm_beta: float | list[float] = field(default=10.0, metadata=_parser(_per_block))
    admm_gamma: float | list[float] = field(default=10.0, metadata=_parser(_per_block))
    weight_decay: float | list[float] = field(default=5e-5, metadata=_parser(_per_block))

    # backprop baseline
    lr: float = 5e-3

    # DeepFacto
    rank: int = 8
    nmf_position: int = 1
    nmf_gamma: float = 1.0
    nmf_init: str = "abs-normal"
    pretrain_iters: int = 200
    pretrain_tol: float = 1e-3
    pg_steps: int = 10
    pg_lr: float = 1e-2

    # convergence mode
    rho0: float = 1.0
    rho_contraction: float = 0.9
    residual_bound0: float = 1.0
    residual_bound_decay: float = 0.95
    eps0: float = 1.0
    eps_decay: float = 0.95
    inner_cap: int = 200
    batch_growth: float = 1.5

    # data
    dataset: str = "synth"
    train_images: str = "train-images-idx3-ubyte"
    train_labels: str = "train-labels-idx1-ubyte"
    test_images: str = "t10k-images-idx3-ubyte"
    test_labels: str = "t10k-labels-idx1-ubyte"
    train_npz: str = ""
    test_npz: str = ""
    train_subset: int = 0
    test_subset: int = 0
    synth_kind: str = "linear-teacher"
    synth_features: int = 4
    synth_samples: int = 32
    synth_classes: int = 4
    synth_rank: int = 8
    synth_noise: float = 0.0
    synth_margin: float = 0.0
    synth_test: int = 0

    # bench
    methods: list[str] = field(
        default_factory=lambda: ["block-admm", "adam"], metadata=_parser(_str_list)
    )

    def validate(self) -> "TrainConfig":
        checks = [
            (self.method in METHODS, f"method must be one of {METHODS}"),
            (all(m in METHODS for m in self.methods), f"methods must be drawn from {METHODS}"),
            (len(self.layers) >= 2 and min(self.layers) >= 1, "layers needs >= 2 positive sizes"),
            (self.init in INIT_KINDS, f"init must be one of {INIT_KINDS}"),
            (self.activation in ACTIVATIONS, f"activation must be one of {ACTIVATIONS}"),
            (self.loss in LOSS_KINDS, f"loss must be one of {LOSS_KINDS}"),
            (self.z_optimizer in OPTIMIZERS, f"z_optimizer must be one of {OPTIMIZERS}"),
            (self.theta_optimizer in OPTIMIZERS, f"theta_optimizer must be one of {OPTIMIZERS}"),
            (self.penalty_form in PENALTY_FORMS, f"penalty_form must be one of {PENALTY_FORMS}"),
            (self.nmf_init in NMF_INITS, f"nmf_init must be one of {NMF_INITS}"),
            (self.dataset in DATASETS, f"dataset must be one of {DATASETS}"),
            (self.synth_kind in SYNTH_KINDS, f"synth_kind must be one of {SYNTH_KINDS}"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.train_subset >= 0 and self.test_subset >= 0, "subset sizes must be >= 0"),
            (self.lr > 0, "lr must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

        # the per-method configs check the rest
        try:
            num_blocks = self.num_blocks()
            if self.method in ("block-admm", "deepfacto", "convergence"):
                self.batch_config().validate(num_blocks)
            if self.method == "online":
                self.online_config().validate(num_blocks)
            if self.method == "standard-admm":
                self.standard_config().validate(len(self.layers) - 1)
            if self.method == "deepfacto":
                self.facto_config().validate(len(self.layers) - 1)
            if self.method == "convergence":
                self.schedule()
                self.convergence_config().validate()
            if self.method in ("sgd", "adam"):
                self.baseline_config().validate()
            if self.dataset == "synth":
                self.synth_spec().validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def num_blocks(self) -> int:
        """Block count. `boundaries` lists the 0-based Linear layers that start a
        new block; none means one block per Linear.
        """
        linear_count = len(self.layers) - 1
        bounds = self.boundaries
        if bounds and (min(bounds) < 1 or max(bounds) >= linear_count):
            raise ValueError(f"boundaries {bounds} must lie in [1, {linear_count - 1}]")
        if any(a >= b for a, b in zip(bounds, bounds[1:])):
            raise ValueError(f"boundaries must be strictly increasing, got {bounds}")
        return len(bounds) + 1 if bounds else linear_count

    def batch_config(self) -> BatchAdmmConfig:
        return BatchAdmmConfig(
            beta=self.beta,
            z_lr=self.z_lr,
            theta_lr=self.theta_lr,
            primal_steps=self.primal_steps,
            batch_size=self.batch_size,
            theta_batches=self.theta_batches,
            z_optimizer=self.z_optimizer,
            theta_optimizer=self.theta_optimizer,
            repeat=self.repeat,
            dual_init=self.dual_init,
            loss=self.loss,
            epochs=self.epochs,
            verbose=self.verbose,
        )

    def online_config(self) -> OnlineAdmmConfig:
        return OnlineAdmmConfig(
            beta=self.beta,
            z_lr=self.z_lr,
            theta_lr=self.theta_lr,
            batch_size=self.batch_size,
            z_optimizer=self.z_optimizer,
            theta_optimizer=self.theta_optimizer,
            penalty_form=self.penalty_form,
            loss=self.loss,
            epochs=self.epochs,
            verbose=self.verbose,
        )

    def standard_config(self) -> StandardAdmmConfig:
        return StandardAdmmConfig(
            beta=self.admm_beta,
            gamma=self.admm_gamma,
            weight_decay=self.weight_decay,
            loss=self.loss,
            epochs=self.epochs,
            verbose=self.verbose,
        )

    def baseline_config(self, optimizer: str | None = None) -> BaselineConfig:
        return BaselineConfig(
            optimizer=optimizer or (self.method if self.method in OPTIMIZERS else "adam"),
            lr=self.lr,
            batch_size=self.batch_size,
            loss=self.loss,
            epochs=self.epochs,
            verbose=self.verbose,
        )

    def facto_config(self) -> DeepFactoConfig:
        return DeepFactoConfig(
            rank=self.rank,
            position=self.nmf_position,
            gamma=self.nmf_gamma,
            init=self.nmf_init,
            pretrain_iters=self.pretrain_iters,
            pretrain_tol=self.pretrain_tol,
            pg_steps=self.pg_steps,
            pg_lr=self.pg_lr,
        )

    def schedule(self) -> PenaltySchedule:
        return PenaltySchedule(
            rho=self.rho0,
            contraction=self.rho_contraction,
            residual_bound=self.residual_bound0,
            bound_decay=self.residual_bound_decay,
            tolerance=self.eps0,
            tolerance_decay=self.eps_decay,
        )

    def convergence_config(self) -> ConvergenceConfig:
        return ConvergenceConfig(
            outer_iterations=self.epochs,
            inner_cap=self.inner_cap,
            batch_growth=self.batch_growth,
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            kind=self.synth_kind,
            features=self.synth_features,
            samples=self.synth_samples,
            classes=self.synth_classes,
            rank=self.synth_rank,
            noise=self.synth_noise,
            margin=self.synth_margin,
        )

    def data_file(self, name: str) -> Path:
        """Resolve a data file name against BLOCKADMM_DATA_PATH when relative."""
        path = Path(name)
        base = os.getenv(DATA_PATH_ENV, "")
        if not path.is_absolute() and base:
            return Path(base) / path
        return path

    def to_env_text(self) -> str:
        """Fully resolved configuration, one sorted key=value per line."""
        lines = []
        for name in sorted(f.name for f in fields(self)):
            value = getattr(self, name)
            if isinstance(value, bool):
                text = str(value).lower()
            elif isinstance(value, list):
                text = ",".join(str(v) for v in value)
            else:
                text = str(value)
            lines.append(f"{name}={text}")
        return "\n".join(lines) + "\n"


def _coerce(spec, raw: str):
    parse = spec.metadata.get("parse")
    if parse is not None:
        return parse(raw)
    if spec.type in (int, "int"):
        return int(raw)
    if spec.type in (float, "float"):
        return float(raw)
    return raw.strip()


def config_from_mapping(
    values: dict[str, str | None], overrides: dict | None = None
) -> TrainConfig:
    """Build a validated TrainConfig from raw string values."""
    specs = {f.name: f for f in fields(TrainConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in specs:
            raise ConfigError(f"unknown config key '{key}'")
        if raw is None:
            raise ConfigError(f"config key '{key}' has no value")
        try:
            kwargs[key] = _coerce(specs[key], raw)
        except ValueError as e:
            raise ConfigError(f"config key '{key}': cannot parse '{raw}' ({e})") from e

    kwargs.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig(**kwargs).validate()


def load_config(path: Path | None, overrides: dict | None = None) -> TrainConfig:
    """Read a key=value config file; None gives the defaults."""
    if path is None:
        return config_from_mapping({}, overrides)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return config_from_mapping(dict(dotenv_values(path)), overrides)
