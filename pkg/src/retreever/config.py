"""Run configuration: strict YAML parsing, resolution, and hashing.

Configs are nested key/value files mirroring the dataclasses below. Unknown
keys are rejected (with the offending key named) so ablation grids stay
honest; missing keys take the documented defaults and are echoed back into
the resolved copy written next to every run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .models import HEADS, VARIANTS, ModelConfig
from .tasks import FAMILIES
from .tree import parse_ordering

TASKS = ("copy", "gp")


@dataclass
class TaskConfig:
    name: str = "copy"
    k: int = 6  # copy: sequence length 2^k
    family: str = "rbf"  # gp: training kernel

    def __post_init__(self):
        if self.name not in TASKS:
            raise ConfigError(f"task.name must be one of {TASKS}, got {self.name!r}")
        if self.family not in FAMILIES:
            raise ConfigError(
                f"task.family must be one of {FAMILIES}, got {self.family!r}"
            )
        if self.k < 2:
            raise ConfigError(f"task.k must be >= 2, got {self.k}")


@dataclass
class ModelArch:
    variant: str = "retreever"
    d_model: int = 64
    heads: int = 4
    encoder_depth: int = 2
    ffn_ratio: int = 4
    dropout: float = 0.0
    latents: int = 8
    b_f: int = 2
    ordering: str = "index"
    share_policy_projections: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"model.variant must be one of {VARIANTS}, got {self.variant!r}"
            )
        parse_ordering(self.ordering)


@dataclass
class LossConfig:
    lambda_rl: float = 1.0
    lambda_ca: float = 1.0
    alpha: float = 0.01
    reward: str = "accuracy"
    baseline: bool = False

    def __post_init__(self):
        if min(self.lambda_rl, self.lambda_ca, self.alpha) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.reward not in ("accuracy", "neg_task_loss"):
            raise ConfigError(
                f"loss.reward must be accuracy or neg_task_loss, got {self.reward!r}"
            )


@dataclass
class OptimConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0


@dataclass
class TrainSection:
    steps: int = 1000
    batch_size: int = 16
    eval_every: int = 200
    eval_batches: int = 4
    eval_batch_size: int = 64


@dataclass
class SweepSection:
    """Ablation grid; omitted axes use the full default grid."""

    lambda_rl: list = field(default_factory=lambda: [0.0, 0.1, 1.0, 10.0])
    lambda_ca: list = field(default_factory=lambda: [0.0, 0.1, 1.0, 10.0])
    alpha: list = field(default_factory=lambda: [0.0, 0.01, 0.1, 1.0])
    reward: list = field(default_factory=lambda: ["accuracy", "neg_task_loss"])


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelArch = field(default_factory=ModelArch)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainSection = field(default_factory=TrainSection)
    sweep: SweepSection | None = None
    seed: int = 0
    out_dir: str = "runs/out"

    def model_config(self) -> ModelConfig:
        arch = self.model
        common = dict(
            variant=arch.variant,
            d_model=arch.d_model,
            heads=arch.heads,
            encoder_depth=arch.encoder_depth,
            ffn_ratio=arch.ffn_ratio,
            dropout=arch.dropout,
            latents=arch.latents,
            b_f=arch.b_f,
            ordering=arch.ordering,
            share_policy_projections=arch.share_policy_projections,
        )
        if self.task.name == "copy":
            return ModelConfig(
                head="classification",
                vocab_size=12,
                max_positions=2**self.task.k + 1,
                **common,
            )
        return ModelConfig(
            head="gaussian",
            out_dim=1,
            context_features=2,
            query_features=1,
            **common,
        )

    def to_dict(self) -> dict:
        out = {
            "task": asdict(self.task),
            "model": asdict(self.model),
            "loss": asdict(self.loss),
            "optim": asdict(self.optim),
            "train": asdict(self.train),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }
        if self.sweep is not None:
            out["sweep"] = asdict(self.sweep)
        return out

    def config_hash(self) -> str:
        """Digest of the experiment definition; the artifact location does
        not change the experiment, so out_dir is excluded."""
        payload = self.to_dict()
        payload.pop("out_dir")
        canon = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def save_resolved(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        sections = {
            "task": TaskConfig,
            "model": ModelArch,
            "loss": LossConfig,
            "optim": OptimConfig,
            "train": TrainSection,
        }
        kwargs: dict = {}
        for name, section_cls in sections.items():
            kwargs[name] = _build_section(section_cls, raw.get(name, {}), name)
        if raw.get("sweep") is not None:
            kwargs["sweep"] = _build_section(SweepSection, raw["sweep"], "sweep")
        kwargs["seed"] = int(raw.get("seed", 0))
        kwargs["out_dir"] = str(raw.get("out_dir", "runs/out"))
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        return cls.from_dict(raw or {})


def _build_section(section_cls, raw: dict, path: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {path!r} must be a mapping")
    assert is_dataclass(section_cls)
    names = {f.name for f in fields(section_cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown config key {path}.{key}")
    try:
        return section_cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in config section {path!r}: {exc}") from exc
