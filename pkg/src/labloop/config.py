"""Run configuration: backend selection, failure knobs, and the seed."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import IoError, SchemaError
from .types import RobotState, home_state

INTERVENTION_MODES = ("auto_abort", "auto_retry", "console", "api")


def _default_models() -> dict[str, str]:
    return {"llm": "rule_based", "vlm": "oracle", "vla": "scripted"}


@dataclass
class SystemConfig:
    """Everything a run needs besides the protocol and the scenario."""

    model_selection: dict[str, str] = field(default_factory=_default_models)
    manipulator: RobotState = field(default_factory=home_state)
    retrieval_k: int = 3
    max_retries: int = 2
    noise_rate: float = 0.0
    success_prob: dict[str, float] = field(default_factory=lambda: {"default": 1.0})
    seed: int = 0
    intervention_mode: str = "auto_abort"
    horizon: int = 50
    retrieval_query_mode: str = "condition+index"
    knowledge_base_path: str | None = None  # None -> bundled base

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be >= 1")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must be within [0, 1]")
        if self.intervention_mode not in INTERVENTION_MODES:
            raise ValueError(f"unknown intervention mode {self.intervention_mode!r}")

    def with_seed(self, seed: int) -> "SystemConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "model_selection": dict(self.model_selection),
            "manipulator": self.manipulator.to_dict(),
            "retrieval_k": self.retrieval_k,
            "max_retries": self.max_retries,
            "noise_rate": self.noise_rate,
            "success_prob": dict(self.success_prob),
            "seed": self.seed,
            "intervention_mode": self.intervention_mode,
            "horizon": self.horizon,
            "retrieval_query_mode": self.retrieval_query_mode,
            "knowledge_base_path": self.knowledge_base_path,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        try:
            kwargs = dict(data)
            if "manipulator" in kwargs:
                kwargs["manipulator"] = RobotState.from_dict(kwargs["manipulator"])
            return cls(**kwargs)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad system config: {exc}") from exc


def load_config(path: str | Path) -> SystemConfig:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        return SystemConfig.from_dict(json.loads(raw))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config {path} is not valid JSON: {exc}") from exc
