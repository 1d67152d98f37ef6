# config.py
import argparse
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

from dotenv import load_dotenv

from clustering import DistanceSpec
from errors import ConfigError
from voting import Thresholds

load_dotenv()

# Filter defaults
DEFAULT_K = 4
DEFAULT_XI = 0.005
DEFAULT_LB = 0.15
DEFAULT_MIN_SAMPLE = 101
DEFAULT_MAX_DEPTH = 3
DEFAULT_MAX_ITERS = 100
DEFAULT_SEED = 0
DEFAULT_WEIGHT_SKEW = 2.0
STRATEGIES = ["uni", "sim"]

# Planner defaults
DEFAULT_FAILURE_BASE = 0.9996
DEFAULT_EPSILON_SWEEP = [0.10, 0.15, 0.20, 0.25, 0.30]

# Oracle defaults
DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_OUTPUT_TOKENS = 32
DEFAULT_PARALLELISM = 8
DEFAULT_RETRIES = 3
DEFAULT_TIMEOUT = 60.0
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"

# Embedding defaults
DEFAULT_MAX_CHUNK_TOKENS = 450
DEFAULT_EMBED_BATCH = 64

# Endpoint settings may come from the environment
ENV_PREFIX = "SEMFILTER_"


def env_setting(name: str, default: Optional[str] = None) -> Optional[str]:
    """Read SEMFILTER_<NAME> from the environment (after .env loading)."""
    value = os.getenv(ENV_PREFIX + name.upper(), "").strip()
    return value or default


def resolve_api_key(env_name: str = DEFAULT_API_KEY_ENV) -> str:
    return os.getenv(env_name, "").strip()


@dataclass
class FilterConfig:
    k: int = DEFAULT_K
    xi: float = DEFAULT_XI
    thresholds: Thresholds = field(default_factory=Thresholds)
    distance: DistanceSpec = field(default_factory=DistanceSpec)
    min_sample: int = DEFAULT_MIN_SAMPLE
    max_depth: int = DEFAULT_MAX_DEPTH
    seed: int = DEFAULT_SEED
    strategy: str = "uni"
    max_iters: int = DEFAULT_MAX_ITERS
    weight_skew: float = DEFAULT_WEIGHT_SKEW
    recluster: bool = True

    def validate(self) -> "FilterConfig":
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0 < self.xi <= 1:
            raise ConfigError(f"xi must be in (0, 1], got {self.xi}")
        if self.min_sample < 1:
            raise ConfigError(f"min_sample must be >= 1, got {self.min_sample}")
        if self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.weight_skew < 1:
            raise ConfigError(f"weight_skew must be >= 1, got {self.weight_skew}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        self.thresholds.validate()
        self.distance.validate()
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["thresholds"] = {"lb": self.thresholds.lb, "ub": self.thresholds.ub}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "FilterConfig":
        data = dict(data)
        unknown = set(data) - {f for f in cls.__dataclass_fields__} - {"lb", "ub", "lambda"}
        if unknown:
            raise ConfigError(f"unknown filter config keys: {sorted(unknown)}")

        thresholds = dict(data.pop("thresholds", None) or {})
        for key in ("lb", "ub"):
            if key in data:
                thresholds[key] = data.pop(key)
        distance = dict(data.pop("distance", None) or {})
        if "lambda" in data:
            distance["lam"] = data.pop("lambda")

        try:
            return cls(thresholds=Thresholds(**thresholds), distance=DistanceSpec(**distance), **data)
        except TypeError as e:
            raise ConfigError(f"invalid filter config: {e}") from e


@dataclass
class OracleConfig:
    base_url: str = "https://api.openai.com"
    model: str = "gpt-4o-mini"
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    parallelism: int = DEFAULT_PARALLELISM
    retries: int = DEFAULT_RETRIES
    cache_path: Optional[str] = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = DEFAULT_TIMEOUT

    def validate(self) -> "OracleConfig":
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.retries < 0:
            raise ConfigError(f"retries must be >= 0, got {self.retries}")
        if self.max_output_tokens < 1:
            raise ConfigError(f"max_output_tokens must be >= 1, got {self.max_output_tokens}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_env(cls, **overrides) -> "OracleConfig":
        cfg = cls(
            base_url=env_setting("oracle_base_url", cls.base_url),
            model=env_setting("oracle_model", cls.model),
        )
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg.validate()


@dataclass
class EmbeddingConfig:
    base_url: str = "https://api.openai.com"
    model: str = "text-embedding-3-small"
    max_chunk_tokens: int = DEFAULT_MAX_CHUNK_TOKENS
    batch_size: int = DEFAULT_EMBED_BATCH
    parallelism: int = DEFAULT_PARALLELISM
    retries: int = DEFAULT_RETRIES
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = DEFAULT_TIMEOUT

    def validate(self) -> "EmbeddingConfig":
        if self.max_chunk_tokens < 1:
            raise ConfigError(f"max_chunk_tokens must be >= 1, got {self.max_chunk_tokens}")
        if self.batch_size < 1 or self.parallelism < 1:
            raise ConfigError("batch_size and parallelism must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_env(cls, **overrides) -> "EmbeddingConfig":
        cfg = cls(
            base_url=env_setting("embedding_base_url", cls.base_url),
            model=env_setting("embedding_model", cls.model),
        )
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg.validate()


def load_filter_config(path: Optional[str]) -> FilterConfig:
    """Load a JSON config file mirroring FilterConfig field names; defaults when path is None."""
    if path is None:
        return FilterConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return FilterConfig.from_dict(data)


def get_common_parser() -> argparse.ArgumentParser:
    """Get common argument parser shared by all subcommands"""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, default=None, help="Master RNG seed")
    parser.add_argument("--log-level", default="INFO", help="Logging level for stderr")
    parser.add_argument("--log-json", action="store_true", help="Emit logs as JSON lines")
    parser.add_argument("--force", action="store_true", help="Overwrite existing output files")
    return parser
