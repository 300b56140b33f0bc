"""The single structured run configuration.

A config document is a JSON object with one section per component.  Every
section is optional and fully defaulted; unknown sections or fields are
rejected.  ``resolve`` returns the defaulted document that is written next
to every artifact, and ``config_hash`` fingerprints it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .market import GeneratorConfig
from .metrics import MetricsConfig
from .miro import LearnerConfig, TeacherConfig
from .policy import PolicyConfig
from .training import TrainConfig
from .worldmodel import WorldModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExpertConfig:
    K: int = 32
    method: str = "auto"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.method not in ("auto", "bruteforce", "relaxed"):
            raise ValueError(f"unknown expert method {self.method!r}")


@dataclass
class PidConfig:
    kp: float = 0.2
    ki: float = 0.02
    kd: float = 0.0
    integral_limit: float = 2.0


@dataclass
class CemConfig:
    window: int = 5
    iterations: int = 5
    population: int = 32
    elite_frac: float = 0.25
    init_std: float = 0.5


@dataclass
class LoopConfig:
    iters: int = 200
    refresh_every: int = 10
    bc_weight: float | None = None
    beta2: float | None = None


@dataclass
class DataConfig:
    format: str = "jsonl"

    def __post_init__(self):
        if self.format not in ("jsonl", "npz"):
            raise ValueError(f"unknown dataset format {self.format!r}")


SECTIONS = {
    "data": DataConfig,
    "expert": ExpertConfig,
    "world_model": WorldModelConfig,
    "policy": PolicyConfig,
    "teacher": TeacherConfig,
    "learner": LearnerConfig,
    "train": LoopConfig,
    "metrics": MetricsConfig,
    "pid": PidConfig,
    "cem": CemConfig,
}


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    data: DataConfig = field(default_factory=DataConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    train: LoopConfig = field(default_factory=LoopConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    pid: PidConfig = field(default_factory=PidConfig)
    cem: CemConfig = field(default_factory=CemConfig)

    def to_dict(self):
        out = {"generator": self.generator.to_dict()}
        for name in SECTIONS:
            out[name] = asdict(getattr(self, name))
        return out

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(doc) - set(SECTIONS) - {"generator"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        try:
            if "generator" in doc:
                kw["generator"] = GeneratorConfig.from_dict(doc["generator"])
            for name, klass in SECTIONS.items():
                if name not in doc:
                    continue
                sec = doc[name]
                if not isinstance(sec, dict):
                    raise ConfigError(f"section {name!r} must be an object")
                bad = set(sec) - {f.name for f in fields(klass)}
                if bad:
                    raise ConfigError(f"unknown fields in {name!r}: {sorted(bad)}")
                kw[name] = klass(**sec)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**kw)

    def train_config(self):
        t = self.train
        return TrainConfig(iters=t.iters, refresh_every=t.refresh_every, bc_weight=t.bc_weight, beta2=t.beta2,
                           world_model=self.world_model, policy=self.policy, teacher=self.teacher,
                           learner=self.learner)


def _coerce(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc, assignments):
    """Apply ``section.field=value`` strings (values parsed as JSON when possible)."""
    doc = json.loads(json.dumps(doc))
    for a in assignments:
        if "=" not in a:
            raise ConfigError(f"override {a!r} is not of the form section.field=value")
        key, value = a.split("=", 1)
        parts = key.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {key!r} must be section.field")
        doc.setdefault(parts[0], {})[parts[1]] = _coerce(value)
    return doc


def load_config(path=None, overrides=()):
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from None
    return RunConfig.from_dict(apply_overrides(doc, overrides))


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg.to_dict()).encode()).hexdigest()
