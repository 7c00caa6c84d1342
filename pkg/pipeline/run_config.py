"""
Run configuration: built-in defaults, then a YAML config file, then BID_*
environment variables, then command-line flags. The merged values are
kept as flat dotted keys ("quantizer.k_class") and written back out as a
YAML snapshot that can be fed to --config to repeat the run.
"""
import os
import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Mapping, Optional

import yaml

from evaluator.report import EvalConfig
from motion.dataset import GeneratorConfig
from trainer.config import DEFAULT_VALUES, TrainConfig, flatten, unflatten

logger = logging.getLogger(__name__)

ENV_PREFIX = "BID_"
SNAPSHOT_NAME = "config.snapshot"
# BID_* variables that steer tooling rather than the run
RESERVED_ENV = {"BID_SLOW_TESTS"}


class UsageError(Exception):
    """Bad command-line usage or configuration; maps to exit code 1."""


def parse_value(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise UsageError(f"Cannot parse value {text!r}: {e}") from e


def coerce(key: str, value: Any) -> Any:
    """Checks a value against the type of its default and normalises numbers."""
    if key not in DEFAULT_VALUES:
        raise UsageError(f"Unknown configuration key {key!r}")
    default = DEFAULT_VALUES[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise UsageError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise UsageError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise UsageError(f"{key} must be a list, got {value!r}")
        return value
    if value is None:
        raise UsageError(f"{key} must not be empty")
    return str(value)


@dataclass
class RunConfig:
    values: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULT_VALUES))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def out_dir(self) -> str:
        return str(self.values["output.dir"])

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    def tree(self) -> Dict[str, Any]:
        return unflatten(self.values)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        values = copy.deepcopy(self.values)
        for key, value in overrides.items():
            values[key] = coerce(key, value)
        return RunConfig(values)

    def write_snapshot(self) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        path = self.path(SNAPSHOT_NAME)
        with open(path, "w") as f:
            yaml.safe_dump(self.tree(), f, default_flow_style=False, sort_keys=True)
        return path

    def generator_config(self) -> GeneratorConfig:
        v = self.values
        if not v["data.classes"]:
            raise UsageError("data.classes is empty: name at least two generator ids")
        if len(v["data.classes"]) < 2:
            raise UsageError(f"data.classes needs at least two classes, got {v['data.classes']}")
        return GeneratorConfig(
            classes=list(v["data.classes"]), train_count=v["data.train_count"], val_count=v["data.val_count"],
            test_count=v["data.test_count"], joints=v["data.joints"], min_len=v["data.min_len"],
            max_len=v["data.max_len"], min_segments=v["data.min_segments"], max_segments=v["data.max_segments"],
            min_duration=v["data.min_duration"], min_transition=v["data.min_transition"],
            max_transition=v["data.max_transition"], label_fraction=v["data.label_fraction"],
            frame_rate=v["data.frame_rate"])

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_values(self.values)

    def eval_config(self) -> EvalConfig:
        v = self.values
        return EvalConfig(iou_thresholds=[float(t) for t in v["eval.iou_thresholds"]],
                          score_thresholds=[float(t) for t in v["eval.score_thresholds"]],
                          purity_trials=int(v["eval.purity_trials"]), seed=self.seed)


def load_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            tree = yaml.safe_load(f) or {}
    except IOError as e:
        raise UsageError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise UsageError(f"Config file {path} is not valid YAML: {e}") from e
    if not isinstance(tree, dict):
        raise UsageError(f"Config file {path} must hold a mapping of sections")
    return {key: coerce(key, value) for key, value in flatten(tree).items()}


def env_overrides(env: Mapping[str, str]) -> Dict[str, Any]:
    """BID_SECTION__KEY=value, case-insensitive; `__` stands for the section dot."""
    found = {}
    for name in sorted(env):
        if not name.upper().startswith(ENV_PREFIX) or name.upper() in RESERVED_ENV:
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        if key not in DEFAULT_VALUES:
            logger.warning(f"Ignoring environment variable {name}: no configuration key {key!r}")
            continue
        found[key] = coerce(key, parse_value(env[name]))
    return found


def flag_overrides(assignments: Iterable[str]) -> Dict[str, Any]:
    found = {}
    for item in assignments:
        key, sep, text = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key = key.strip()
        found[key] = coerce(key, parse_value(text))
    return found


def load_run_config(config_path: Optional[str] = None, assignments: Iterable[str] = (),
                    env: Optional[Mapping[str, str]] = None, flags: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Flags win over environment, environment over the file, the file over built-in defaults."""
    values = copy.deepcopy(DEFAULT_VALUES)
    if config_path is not None:
        values.update(load_file(config_path))
    values.update(env_overrides(os.environ if env is None else env))
    values.update(flag_overrides(assignments))
    for key, value in (flags or {}).items():
        if value is not None:
            values[key] = coerce(key, value)
    logger.debug(f"Resolved configuration with {len(values)} keys")
    return RunConfig(values)
