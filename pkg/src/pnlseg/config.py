"""Run configuration: defaults, file loading, overrides, validation.

Every key has a default; unknown keys are rejected; the resolved config is
echoed into the run directory so any run can be reproduced from its own
artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    # paths
    data: str = "data/train"
    test_data: str = ""            # empty: skip final evaluation
    out: str = "runs/run"
    resume: str = ""               # checkpoint to resume from

    # neighborhood + schedule (defaults follow the reference setup)
    radius: int = 20
    alpha: float = 0.995
    lambda_pretrain: float = 0.8
    lambda_student: float = 0.5
    teacher_epochs: int = 150
    student_epochs: int = 400
    inner_loops: int = 1
    learning_rate: float = 0.05
    seed: int = 0

    # ablation switches (True = component enabled)
    pns: bool = True
    psm: bool = True
    pnmxp: bool = True
    pvrmxp: bool = True

    # pseudo-label scoring
    psm_threshold: float = 0.0     # tau; <= 0 keeps the score continuous
    psm_variant: str = "count"

    # mixup blend distribution
    beta_a: float = 1.0
    beta_b: float = 1.0

    # model/trainer plumbing
    student_init: str = "random"   # "random" | "teacher"
    checkpoint_every: int = 20
    eval_average: str = "micro"
    workers: int = 1

    def validate(self) -> "RunConfig":
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")
        for name in ("lambda_pretrain", "lambda_student"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0,1], got {v}")
        if self.radius < 0:
            raise ConfigError(f"radius must be >= 0, got {self.radius}")
        if self.teacher_epochs < 0 or self.student_epochs < 0 or self.inner_loops < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.psm_variant not in ("count", "prob_sum"):
            raise ConfigError(f"psm_variant must be count|prob_sum, got {self.psm_variant}")
        if self.student_init not in ("random", "teacher"):
            raise ConfigError(f"student_init must be random|teacher, got {self.student_init}")
        if self.eval_average not in ("micro", "macro"):
            raise ConfigError(f"eval_average must be micro|macro, got {self.eval_average}")
        if self.beta_a <= 0 or self.beta_b <= 0:
            raise ConfigError("beta parameters must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value, target_type):
    if isinstance(value, str):
        t = str(target_type)
        if "bool" in t:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name}: cannot parse {value!r} as bool")
        if "int" in t:
            return int(value)
        if "float" in t:
            return float(value)
    return value


def make_run_config(file_path: str = None, overrides: dict = None) -> RunConfig:
    """defaults <- config file <- overrides; rejects unknown keys."""
    merged = {}
    if file_path:
        p = Path(file_path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            merged.update(json.loads(p.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
    merged.update(overrides or {})

    unknown = sorted(set(merged) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    coerced = {k: _coerce(k, v, _FIELD_TYPES[k]) for k, v in merged.items()}
    try:
        cfg = RunConfig(**coerced)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg.validate()


def apply_ablations(cfg: RunConfig, ablate: str) -> RunConfig:
    """Disable components named in a comma-separated list, e.g. 'pns,psm'."""
    if not ablate:
        return cfg
    valid = {"pns", "psm", "pnmxp", "pvrmxp"}
    updates = {}
    for name in ablate.split(","):
        name = name.strip().lower()
        if not name:
            continue
        if name not in valid:
            raise ConfigError(f"unknown ablation target {name!r}; choose from {sorted(valid)}")
        updates[name] = False
    return replace(cfg, **updates)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.json"
    path.write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True))
    return path
