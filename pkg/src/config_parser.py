import json
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from errors import ConfigurationError
from models import (
    ExperimentConfig,
    HeadsConfig,
    PhantomConfig,
    RunConfig,
)

load_dotenv()

logger = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def _expand(value: Any) -> Any:
    """Expand ${VAR} and ${VAR:-default} placeholders from the environment, recursively"""
    if isinstance(value, str):
        def replace(match):
            name, default = match.group(1), match.group(2)
            if name not in os.environ:
                if default is not None:
                    return default
                raise ConfigurationError(f"environment variable {name} is not set", field=name)
            return os.environ[name]
        return _PLACEHOLDER.sub(replace, value)
    if isinstance(value, dict):
        return {k: _expand(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_expand(v) for v in value]
    return value


def _resolve(base: Path, path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    candidate = Path(path)
    if not candidate.is_absolute():
        candidate = base / candidate
    return str(candidate)


class ConfigParser:
    """Loads the JSON config files into validated models"""

    def read_json(self, file_path: str) -> Dict[str, Any]:
        try:
            with open(file_path, "r") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {file_path}", field="path")
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"invalid JSON in {file_path}: {e}", field="path")
        return _expand(data)

    def build(self, model: Type[ConfigT], data: Dict[str, Any], source: str = "<memory>") -> ConfigT:
        try:
            return model(**data)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(part) for part in first["loc"])
            raise ConfigurationError(f"{source}: {field}: {first['msg']}", field=field)

    def parse_run_config(self, file_path: str, seed: Optional[int] = None) -> RunConfig:
        base = Path(file_path).resolve().parent
        cfg = self.build(RunConfig, self.read_json(file_path), file_path)
        if seed is not None:
            cfg.seed = seed
        if os.getenv("DOPPLER_WORKERS"):
            cfg.workers = int(os.environ["DOPPLER_WORKERS"])
        cfg.heads = _resolve(base, cfg.heads)
        cfg.phantom = _resolve(base, cfg.phantom)
        cfg.data_dir = _resolve(base, cfg.data_dir)
        cfg.artifact = _resolve(base, cfg.artifact)
        cfg.report_dir = _resolve(base, cfg.report_dir)
        for split in ("train", "val", "test", "unknown", "extra"):
            setattr(cfg.data, split, _resolve(base, getattr(cfg.data, split)))
        cfg.pipeline.check()
        logger.debug("loaded run config %s", file_path)
        return cfg

    def parse_phantom_config(self, file_path: str) -> PhantomConfig:
        return self.build(PhantomConfig, self.read_json(file_path), file_path)

    def parse_heads_config(self, file_path: str) -> HeadsConfig:
        return self.build(HeadsConfig, self.read_json(file_path), file_path)

    def parse_experiment_config(self, file_path: str) -> ExperimentConfig:
        base = Path(file_path).resolve().parent
        cfg = self.build(ExperimentConfig, self.read_json(file_path), file_path)
        cfg.run = _resolve(base, cfg.run)
        for spec in cfg.experiments:
            spec.phantom = _resolve(base, spec.phantom)
        return cfg
