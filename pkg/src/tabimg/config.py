"""Run configuration: a flat key=value file plus command-line overrides.

Every training hyperparameter, encoder size, synthetic-benchmark knob and
ablation flag lives in one flat namespace so that a run is fully described
by a single small text file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # --- loss weights and schedule ---
    alpha: float = 0.2          # labeled cross-entropy weight
    beta: float = 3.0           # cross-modal contrastive consistency weight
    gamma: float = 0.5          # disentanglement (MI upper bound) weight
    lambda_p: float = 1.0       # prototypical contrastive weight
    lambda_u: float = 0.2       # unlabeled cross-entropy weight
    tau: float = 0.9            # confidence threshold for pseudo-labels
    r: float = 0.9              # smoothing balance between prediction and prototype scores
    ema_momentum: float = 0.996  # teacher EMA coefficient m
    kappa: float = 0.1          # contrastive temperature

    # --- batching / optimization ---
    batch_size: int = 64        # labeled batch size B
    mu: int = 7                 # unlabeled-to-labeled batch ratio
    lr: float = 1e-3
    varnet_lr: float = 1e-3
    grad_clip: float = 0.0      # max student grad norm; 0 disables clipping
    start_pl_epoch: int = 5
    max_epochs: int = 40
    patience: int = 10
    seed: int = 0

    # --- encoder sizes ---
    token_dim: int = 64         # D
    image_channels: str = "16,32,64"  # conv stage widths, comma separated
    tabular_layers: int = 2
    tabular_heads: int = 4
    attn_heads: int = 4
    proj_dim: int = 128
    head_activation: str = "relu"  # relu | gelu

    # --- augmentation ---
    tabular_replace_fraction: float = 0.3
    image_aug_strength: float = 1.0

    # --- evaluation ---
    metric: str = "accuracy"    # accuracy | auc

    # --- ablation flags ---
    enable_dcc: bool = True
    enable_cgpl: bool = True
    enable_pgls: bool = True

    # --- synthetic benchmark ---
    synth_classes: int = 4
    synth_d_shared: int = 4
    synth_d_image: int = 4
    synth_d_tabular: int = 4
    synth_w_shared: float = 1.5
    synth_w_image: float = 1.5
    synth_w_tabular: float = 1.5
    synth_n_train: int = 2000
    synth_n_val: int = 500
    synth_n_test: int = 500
    synth_label_fraction: float = 0.05
    synth_noise_sigma: float = 0.3
    synth_image_size: int = 32
    synth_tabular_columns: int = 12
    synth_categorical_columns: int = 4

    # --- paths ---
    data_dir: str = ""
    out_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.beta >= 0, "beta must be >= 0"),
            (self.gamma >= 0, "gamma must be >= 0"),
            (self.lambda_p >= 0, "lambda_p must be >= 0"),
            (self.lambda_u >= 0, "lambda_u must be >= 0"),
            (0 < self.tau <= 1, "tau must be in (0, 1]"),
            (0 <= self.r <= 1, "r must be in [0, 1]"),
            (0 <= self.ema_momentum <= 1, "ema_momentum must be in [0, 1]"),
            (self.kappa > 0, "kappa must be > 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.mu >= 1, "mu must be >= 1"),
            (self.lr > 0, "lr must be > 0"),
            (self.grad_clip >= 0, "grad_clip must be >= 0"),
            (self.token_dim > 0, "token_dim must be > 0"),
            (self.token_dim % self.attn_heads == 0,
             "token_dim must be divisible by attn_heads"),
            (self.token_dim % self.tabular_heads == 0,
             "token_dim must be divisible by tabular_heads"),
            (self.head_activation in ("relu", "gelu"),
             "head_activation must be relu or gelu"),
            (self.metric in ("accuracy", "auc"), "metric must be accuracy or auc"),
            (0 < self.synth_label_fraction <= 1,
             "synth_label_fraction must be in (0, 1]"),
            (self.synth_w_shared >= 0 and self.synth_w_image >= 0
             and self.synth_w_tabular >= 0, "synth weights must be >= 0"),
            (self.synth_w_shared + self.synth_w_image + self.synth_w_tabular > 0,
             "at least one synth information weight must be positive"),
            (0 <= self.synth_categorical_columns <= self.synth_tabular_columns,
             "synth_categorical_columns must not exceed synth_tabular_columns"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def stage_channels(self) -> list[int]:
        return [int(c) for c in self.image_channels.split(",") if c.strip()]

    def apply_ablations(self) -> "RunConfig":
        """Return a copy with disabled components zeroed out."""
        cfg = dataclasses.replace(self)
        if not cfg.enable_dcc:
            cfg.beta = 0.0
            cfg.gamma = 0.0
        if not cfg.enable_cgpl:
            cfg.lambda_u = 0.0
        if not cfg.enable_pgls:
            cfg.r = 1.0
            cfg.lambda_p = 0.0
        return cfg


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    if ftype == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from None
    return raw


def parse_config_text(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys reject."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, str(val)) if isinstance(val, str) else val
    return RunConfig(**values)


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(), overrides)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: str | Path):
    Path(path).write_text(serialize_config(cfg))
