"""Pipeline configuration: a single versioned JSON document.

Defaults follow the reference runtime setup: delta 0.1, boundary fraction
0.1, lambda cap 0.4, alpha 0.8, beta 1.0, loss weights (1.0, 1.0, 0.3), and
lr 0.01 decayed by 10x every 8 optimizer epochs. Unknown keys anywhere are
rejected outright.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError

CONFIG_VERSION = 1


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


@dataclass
class DatasetConfig:
    kind: str = "blobs"              # "blobs" | "idx"
    d: int = 10
    classes: int = 3
    n_train: int = 600
    n_test: int = 600
    separation: float = 5.0
    train_images: str | None = None  # idx paths
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    limit: int | None = None

    @classmethod
    def from_json(cls, data: dict) -> "DatasetConfig":
        _check_keys(data, set(cls.__dataclass_fields__), "dataset")
        cfg = cls(**data)
        if cfg.kind not in ("blobs", "idx"):
            raise ConfigError(f"dataset.kind must be 'blobs' or 'idx', got {cfg.kind!r}")
        if cfg.kind == "idx":
            missing = [k for k in ("train_images", "train_labels", "test_images",
                                   "test_labels") if getattr(cfg, k) is None]
            if missing:
                raise ConfigError(f"idx dataset needs {missing}")
        if cfg.kind == "blobs" and cfg.classes < 3:
            raise ConfigError("boundary synthesis needs at least 3 classes")
        return cfg


@dataclass
class SubjectConfig:
    epochs: int = 5
    h: int = 32
    seed: int | None = None           # defaults to the master seed
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    checkpoint_manifest: str | None = None  # ingest instead of training

    @classmethod
    def from_json(cls, data: dict) -> "SubjectConfig":
        _check_keys(data, set(cls.__dataclass_fields__), "subject")
        cfg = cls(**data)
        if cfg.epochs < 2 and cfg.checkpoint_manifest is None:
            raise ConfigError("subject.epochs must be >= 2")
        return cfg


@dataclass
class BoundaryConfig:
    delta: float = 0.1
    lambda_max: float = 0.4
    max_rounds: int = 16
    alpha: float = 0.8
    target_fraction: float = 0.1
    symmetric_lambda_cap: bool = False  # non-canonical variant; see mixup_bisect

    @classmethod
    def from_json(cls, data: dict) -> "BoundaryConfig":
        _check_keys(data, set(cls.__dataclass_fields__), "boundary")
        return cls(**data)


@dataclass
class ComplexConfig:
    k: int = 15
    negative_rate: int = 2
    metric: str = "euclidean"

    @classmethod
    def from_json(cls, data: dict) -> "ComplexConfig":
        _check_keys(data, set(cls.__dataclass_fields__), "complex")
        return cls(**data)


@dataclass
class AblationFlags:
    no_temporal: bool = False
    no_boundary: bool = False
    no_reconstruction: bool = False

    @classmethod
    def from_json(cls, data: dict) -> "AblationFlags":
        _check_keys(data, set(cls.__dataclass_fields__), "visualizer.ablation")
        return cls(**data)


@dataclass
class VisualizerConfig:
    lambda_proj: float = 1.0
    lambda_recon: float = 1.0
    lambda_temporal: float = 0.3
    beta: float = 1.0
    curve_a: float = 1.93
    curve_b: float = 0.79
    lr: float = 0.01
    lr_decay_every: int = 8
    lr_decay_factor: float = 10.0
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 256
    semantic_k: int = 15
    ablation: AblationFlags = field(default_factory=AblationFlags)

    @classmethod
    def from_json(cls, data: dict) -> "VisualizerConfig":
        _check_keys(data, set(cls.__dataclass_fields__), "visualizer")
        data = dict(data)
        ablation = AblationFlags.from_json(data.pop("ablation", {}))
        return cls(ablation=ablation, **data)


@dataclass
class RenderConfig:
    resolution: int = 300
    palette: list[list[int]] | None = None   # None -> default hue wheel

    @classmethod
    def from_json(cls, data: dict) -> "RenderConfig":
        _check_keys(data, set(cls.__dataclass_fields__), "render")
        return cls(**data)


@dataclass
class PipelineConfig:
    seed: int = 42
    output_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    subject: SubjectConfig = field(default_factory=SubjectConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    complex_: ComplexConfig = field(default_factory=ComplexConfig)
    visualizer: VisualizerConfig = field(default_factory=VisualizerConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    @property
    def subject_seed(self) -> int:
        return self.subject.seed if self.subject.seed is not None else self.seed

    @classmethod
    def from_json(cls, data: dict) -> "PipelineConfig":
        allowed = {"version", "seed", "output_dir", "dataset", "subject", "boundary",
                   "complex", "visualizer", "render"}
        _check_keys(data, allowed, "config root")
        version = data.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        return cls(
            seed=data.get("seed", 42),
            output_dir=data.get("output_dir", "runs/default"),
            dataset=DatasetConfig.from_json(data.get("dataset", {})),
            subject=SubjectConfig.from_json(data.get("subject", {})),
            boundary=BoundaryConfig.from_json(data.get("boundary", {})),
            complex_=ComplexConfig.from_json(data.get("complex", {})),
            visualizer=VisualizerConfig.from_json(data.get("visualizer", {})),
            render=RenderConfig.from_json(data.get("render", {})),
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_json(data)

    def to_json(self) -> dict:
        out = {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "dataset": asdict(self.dataset),
            "subject": asdict(self.subject),
            "boundary": asdict(self.boundary),
            "complex": asdict(self.complex_),
            "visualizer": asdict(self.visualizer),
            "render": asdict(self.render),
        }
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)
