"""Experiment configuration and its flat key-value file format.

One file per experiment: ``key = value`` lines, ``#`` comments, every key
taken from ExperimentConfig's fields. Unknown or duplicate keys are
rejected so a typo cannot silently fall back to a default. Values round
trip losslessly (floats are written with repr precision).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .envs import ENV_NAMES
from .guidance import VARIANTS

OUTPUT_ROOT_ENV_VAR = "GUIDEDRL_OUTPUT_ROOT"

# fixed so every run, whatever its variant or seed, faces the same test
# episodes
DEFAULT_TEST_SET_SEED = 20260801


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: str = "point_reach"
    variant: str = "static_qg"
    total_steps: int = 100000
    eval_period: int = 5000
    collect_block: int = 1000        # env steps per alternation
    train_block: int = 1000          # gradient steps per alternation
    batch_size: int = 100
    buffer_capacity: int = 200000
    gamma: float = 0.98
    learning_rate: float = 0.001
    polyak: float = 0.005
    policy_delay: int = 2
    target_smoothing: bool = True
    exploration_sigma_frac: float = 0.1   # fraction of the action bound
    exploration_mean: float = 0.0
    her_k: int = 4
    bc_weight: float = 2.0
    linear_T: int = 125000
    init_from_qg: str = "auto"       # auto | true | false
    relabel_requery: bool = True
    hidden: tuple[int, ...] = (64, 64)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_test_episodes: int = 100
    test_set_seed: int = DEFAULT_TEST_SET_SEED
    guide_q_path: str = ""
    output_dir: str = "results"

    def __post_init__(self):
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}; choose from {ENV_NAMES}")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; choose from {VARIANTS}"
            )
        if self.init_from_qg not in ("auto", "true", "false"):
            raise ConfigError("init_from_qg must be auto, true, or false")
        for name in ("total_steps", "eval_period", "collect_block", "train_block",
                     "batch_size", "buffer_capacity", "policy_delay", "her_k",
                     "linear_T", "n_test_episodes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")
        if self.learning_rate <= 0 or not 0 < self.polyak <= 1:
            raise ConfigError("learning_rate and polyak out of range")
        if self.exploration_sigma_frac < 0:
            raise ConfigError("exploration_sigma_frac must be nonnegative")
        if self.bc_weight < 0:
            raise ConfigError("bc_weight must be nonnegative")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if not self.hidden:
            raise ConfigError("hidden must name at least one layer")

    def resolved_init_from_qg(self) -> bool | None:
        """None means: let the guidance variant pick its natural default."""
        return {"auto": None, "true": True, "false": False}[self.init_from_qg]


# desk-scale budgets per environment; linear_T stays at 1.25x the step
# budget so the decay schedule keeps its shape across scales
DESK_BUDGETS = {
    "point_reach": dict(total_steps=100000, eval_period=5000, linear_T=125000),
    "planar_push": dict(total_steps=300000, eval_period=10000, linear_T=250000),
    "planar_slide": dict(total_steps=300000, eval_period=10000, linear_T=250000),
}


def default_config(env: str, variant: str, **overrides) -> ExperimentConfig:
    if env not in DESK_BUDGETS:
        raise ConfigError(f"unknown env {env!r}; choose from {ENV_NAMES}")
    merged = dict(DESK_BUDGETS[env])
    merged.update(overrides)
    return ExperimentConfig(env=env, variant=variant, **merged)


_LIST_FIELDS = ("hidden", "seeds")


def _format_value(name: str, value) -> str:
    if name in _LIST_FIELDS:
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name: str, text: str, target_type):
    if name in _LIST_FIELDS:
        try:
            return tuple(int(part) for part in text.split(",") if part.strip() != "")
        except ValueError:
            raise ConfigError(f"{name}: expected comma-separated integers, got {text!r}")
    if target_type is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    if target_type is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {text!r}")
    if target_type is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {text!r}")
    return text


def config_to_text(config: ExperimentConfig) -> str:
    lines = ["# experiment configuration"]
    for f in fields(ExperimentConfig):
        lines.append(f"{f.name} = {_format_value(f.name, getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ExperimentConfig:
    known = {f.name: f for f in fields(ExperimentConfig)}
    type_of = {
        f.name: (tuple if f.name in _LIST_FIELDS else type(f.default))
        for f in fields(ExperimentConfig)
    }
    # tuple defaults carry their own type; scalars use the default's type
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val, type_of[key])
    return ExperimentConfig(**values)


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_text(config))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_text(fh.read())


def output_root(config: ExperimentConfig) -> str:
    """Config's output directory, overridable by the environment."""
    return os.environ.get(OUTPUT_ROOT_ENV_VAR) or config.output_dir


def run_dir(root: str, env: str, variant: str, seed: int) -> str:
    return os.path.join(root, f"{env}__{variant}", f"seed_{seed}")
