"""Flat key-value run configuration.

Grammar (one setting per line):

    # comment
    key = value

Keys are the ``RunConfig`` field names; values are parsed by the field's
type (int, float, or string). Unknown keys and malformed values are
rejected. Command-line flags override file values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .solvers import SolverSpec

__all__ = ["ConfigError", "RunConfig", "parse_config_text", "load_config"]


class ConfigError(ValueError):
    """Malformed configuration file, value, or dataset/solver spec."""


@dataclass
class RunConfig:
    # dataset: "toy" | "toy_control" | "csv:<path>" | "synth:<n>,<d_x>[,<seed>]"
    dataset: str = "toy"
    task: str = "regression"
    num_classes: int = 0  # 0 = infer from csv labels
    x_cols: str = ""
    y_cols: str = ""
    standardize: str = "auto"  # auto = on except for toy datasets
    val_split: float = 0.0  # fraction held out for validation; 0 disables
    split_seed: int = 0
    schedule: str = "linear"
    latent_dim: int = 0  # 0 = 2 * max(d_x, d_y) + 2
    enc_hidden: int = 64
    enc_depth: int = 2
    dyn_hidden: int = 64
    dyn_depth: int = 3
    iterations: int = 5000
    batch_size: int = 128
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    t_zero_prob: float = 0.1
    label_noise_std: float = 0.1
    seed: int = 0
    eval_interval: int = 1000
    patience: int = 10
    log_every: int = 1
    solver: str = "euler:1"
    out: str = "runs/latest"
    node_steps: int = 8
    node_lr: float = 0.0  # 0 = reuse lr; the unrolled baseline often needs its own rate

    def validate(self) -> "RunConfig":
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.standardize not in ("auto", "on", "off"):
            raise ConfigError(f"standardize must be auto|on|off, got {self.standardize!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 <= self.val_split < 1.0:
            raise ConfigError(f"val_split must be in [0, 1), got {self.val_split}")
        try:
            SolverSpec.parse(self.solver)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self._validate_dataset()
        return self

    def _validate_dataset(self) -> None:
        spec = self.dataset
        if spec in ("toy", "toy_control"):
            return
        if spec.startswith("csv:"):
            path = Path(spec[4:])
            if not path.is_file():
                raise ConfigError(f"csv dataset file not found: {path}")
            if not self.x_cols.strip() or not self.y_cols.strip():
                raise ConfigError("csv datasets need x_cols and y_cols")
            return
        if spec.startswith("synth:"):
            parts = spec[len("synth:"):].split(",")
            if len(parts) not in (2, 3):
                raise ConfigError(f"synth spec needs n,d_x[,seed], got {spec!r}")
            try:
                [int(p) for p in parts]
            except ValueError:
                raise ConfigError(f"synth spec needs integers, got {spec!r}") from None
            return
        raise ConfigError(f"unknown dataset spec {spec!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        value = value.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        kind = _FIELDS[key]
        try:
            if kind in (int, "int"):
                values[key] = int(value)
            elif kind in (float, "float"):
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: cannot parse {value!r} as {kind} for key {key!r}"
            ) from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))
