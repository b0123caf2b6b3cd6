"""
Configuration management for nestattn

Two layers, as in any long-running service: process settings come from the
environment (and ``.env``), experiment settings come from a run config file.
The run config is canonicalized before it is embedded anywhere, so two
outputs share provenance exactly when their config texts are equal.
"""

import hashlib

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .exceptions import ConfigurationError
from .models import MechanismKind


class Settings(BaseSettings):
    """Process settings with environment variable support"""

    output_root: str = Field(default="./runs", description="Default root for command outputs")
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="json")
    threads: int = Field(default=1, ge=1, description="torch intra-op threads; 1 keeps runs bit-exact")

    model_config = SettingsConfigDict(
        env_prefix="NESTATTN_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator('log_format')
    @classmethod
    def parse_log_format(cls, v):
        if v not in ("json", "text"):
            raise ValueError("log_format must be 'json' or 'text'")
        return v


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(_Section):
    n_samples: int = Field(default=512, ge=1)
    seed: int = Field(default=0, ge=0)
    image_size: Literal[32] = 32
    held_out_prompts: int = Field(default=12, ge=1, le=24)


class ModelConfig(_Section):
    patch_size: int = Field(default=4, ge=1)
    d_model: int = Field(default=48, ge=1)
    d_attn: int = Field(default=32, ge=1)
    text_dim: int = Field(default=32, ge=1)
    blocks: int = Field(default=2, ge=1)
    mlp_hidden: int = Field(default=96, ge=1)
    max_tokens: int = Field(default=8, ge=2)
    seed: int = Field(default=1, ge=0)


class EncoderConfig(_Section):
    patch_size: int = Field(default=8, ge=1)
    d_enc: int = Field(default=32, ge=1)
    blocks: int = Field(default=2, ge=0)
    num_queries: int = Field(default=64, ge=1)
    mlp_hidden: int = Field(default=64, ge=1)
    query_init_std: float = Field(default=0.02, gt=0)
    seed: int = Field(default=2, ge=0)


class ScheduleConfig(_Section):
    steps: int = Field(default=100, ge=1)
    beta_start: float = Field(default=1e-4, gt=0, lt=1)
    beta_end: float = Field(default=0.02, gt=0, lt=1)
    sample_steps: int = Field(default=25, ge=1)


class TrainConfig(_Section):
    stage: Literal["A", "B"] = "A"
    steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=8, ge=1)
    learning_rate: float = Field(default=0.05, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    grad_clip: float = Field(default=1.0, gt=0)
    seed: int = Field(default=3, ge=0)
    host_checkpoint: str = ""
    log_every: int = Field(default=50, ge=1)


class PersonalizationConfig(_Section):
    mechanism: MechanismKind = MechanismKind.NESTED
    alpha: Union[float, Literal["none"]] = 2.0
    subject_word: str = "subj"
    decoupled_init_std: float = Field(default=0.02, gt=0)

    @field_validator('alpha')
    @classmethod
    def validate_alpha(cls, v):
        if v != "none" and v <= 0:
            raise ValueError("alpha must be positive or 'none'")
        return v

    @property
    def alpha_value(self) -> Optional[float]:
        return None if self.alpha == "none" else float(self.alpha)


class EvalConfig(_Section):
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    prompts: int = Field(default=12, ge=1)
    identities_seed: int = Field(default=1000, ge=0)
    lambdas: List[float] = Field(default_factory=lambda: [1.0, 1.5, 2.0, 2.5, 3.0, 4.0])
    decoupled_lambdas: List[float] = Field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    query_grid: List[int] = Field(default_factory=lambda: [16, 64, 256, 1024])
    alpha_grid: List[Union[float, Literal["none"]]] = Field(default_factory=lambda: ["none", 1.0, 2.0, 3.0])
    probes: int = Field(default=16, ge=1)
    ablation_lambda: float = Field(default=1.0, ge=1.0)


class RunSection(_Section):
    jobs: int = Field(default=1, ge=1)


class RunConfig(_Section):
    """Complete experiment configuration; unknown keys are rejected"""

    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    personalization: PersonalizationConfig = Field(default_factory=PersonalizationConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    run: RunSection = Field(default_factory=RunSection)

    def with_overrides(self, **sections: Dict[str, Any]) -> "RunConfig":
        """Copy with per-section field overrides, re-validated"""
        payload = self.model_dump(mode="json")
        for section, values in sections.items():
            if section not in payload:
                raise ConfigurationError(f"Unknown config section: {section}", setting=section)
            payload[section].update(values)
        return parse_run_config(payload)

    def canonical_text(self) -> str:
        return canonical_text(self)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


# Training-budget keys compared across mechanism checkpoints
BUDGET_KEYS = (
    "data.n_samples", "data.seed", "encoder.num_queries", "encoder.blocks", "encoder.d_enc",
    "train.steps", "train.batch_size", "train.learning_rate", "train.seed",
)


def _render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_render_value(v) for v in value) + "]"
    raise ConfigurationError(f"Unsupported config value type: {type(value).__name__}", value=repr(value))


def canonical_text(config: RunConfig) -> str:
    """Sorted sections and keys, one ``key = value`` per line, LF endings"""
    payload = config.model_dump(mode="json")
    lines: List[str] = []
    for section in sorted(payload):
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        for key in sorted(payload[section]):
            lines.append(f"{key} = {_render_value(payload[section][key])}")
    return "\n".join(lines) + "\n"


def parse_run_config(payload: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(payload)
    except PydanticValidationError as e:
        errors = [
            {"loc": ".".join(str(p) for p in err["loc"]), "msg": err["msg"]}
            for err in e.errors()
        ]
        first = errors[0]
        raise ConfigurationError(
            f"Invalid configuration at {first['loc']}: {first['msg']}",
            setting=first["loc"],
            value=errors,
        ) from e


def parse_config_text(text: str) -> RunConfig:
    try:
        payload = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Config syntax error: {e}") from e
    return parse_run_config(payload)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Load and validate a run config file"""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}", setting="config", value=str(path))
    return parse_config_text(path.read_text(encoding="utf-8"))


def budget_signature(config: RunConfig) -> Dict[str, Any]:
    """Flattened values of the training-budget keys"""
    payload = config.model_dump(mode="json")
    signature = {}
    for dotted in BUDGET_KEYS:
        section, key = dotted.split(".")
        signature[dotted] = payload[section][key]
    return signature
