"""Pipeline configuration: one TOML document consolidating every stage's
defaults, validated up front so a bad value fails before any stage runs."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from .errors import ConfigInvalid

ENV_SEED = "BFIKI_SEED"


@dataclass(frozen=True)
class SraSection:
    epochs: int = 160
    lr: float = 3e-3
    batch: int = 8


@dataclass(frozen=True)
class KiSection:
    epochs: int = 12
    lr: float = 1e-3
    batch: int = 16


@dataclass(frozen=True)
class PipelineConfig:
    fs_hz: float = 40.0
    selector: str = "first_phi_q"
    alpha: float = 0.6
    beta: float = 0.5
    lambda_: float = 0.5
    viability_window_s: float = 1.0
    idle_timeout_s: float = 2.0
    pre_pad_s: float = 0.0
    seed: int = 0
    topn: int = 100
    layout: str = "numeric"
    sra: SraSection = field(default_factory=SraSection)
    ki: KiSection = field(default_factory=KiSection)


_TOP_KEYS = {"fs_hz", "selector", "alpha", "beta", "lambda", "viability_window_s",
             "idle_timeout_s", "pre_pad_s", "seed", "topn", "layout", "sra", "ki"}


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """Parse and validate a TOML config; None yields the defaults."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    try:
        sra = SraSection(**raw.get("sra", {}))
        ki = KiSection(**raw.get("ki", {}))
        cfg = PipelineConfig(
            fs_hz=float(raw.get("fs_hz", 40.0)),
            selector=str(raw.get("selector", "first_phi_q")),
            alpha=float(raw.get("alpha", 0.6)),
            beta=float(raw.get("beta", 0.5)),
            lambda_=float(raw.get("lambda", 0.5)),
            viability_window_s=float(raw.get("viability_window_s", 1.0)),
            idle_timeout_s=float(raw.get("idle_timeout_s", 2.0)),
            pre_pad_s=float(raw.get("pre_pad_s", 0.0)),
            seed=int(raw.get("seed", 0)),
            topn=int(raw.get("topn", 100)),
            layout=str(raw.get("layout", "numeric")),
            sra=sra, ki=ki,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc
    validate_config(cfg)
    return apply_env_seed(cfg)


def validate_config(cfg: PipelineConfig) -> None:
    from .series import SELECTORS
    from .inference import LAYOUTS
    problems = []
    if cfg.fs_hz <= 0:
        problems.append("fs_hz must be positive")
    if not 0 < cfg.alpha <= 1:
        problems.append("alpha must lie in (0, 1]")
    if not 0 < cfg.beta <= 1:
        problems.append("beta must lie in (0, 1]")
    if cfg.lambda_ < 0:
        problems.append("lambda must be non-negative")
    if cfg.viability_window_s <= 0:
        problems.append("viability_window_s must be positive")
    if cfg.idle_timeout_s <= 0:
        problems.append("idle_timeout_s must be positive")
    if cfg.pre_pad_s < 0:
        problems.append("pre_pad_s must be non-negative")
    if cfg.topn < 1:
        problems.append("topn must be at least 1")
    if cfg.selector not in SELECTORS:
        problems.append(f"selector must be one of {SELECTORS}")
    if cfg.layout not in LAYOUTS:
        problems.append(f"layout must be one of {sorted(LAYOUTS)}")
    if cfg.sra.epochs < 0 or cfg.ki.epochs < 0:
        problems.append("epochs must be non-negative")
    if cfg.sra.lr < 0 or cfg.ki.lr < 0:
        problems.append("learning rates must be non-negative")
    if cfg.sra.batch < 1 or cfg.ki.batch < 1:
        problems.append("batch sizes must be at least 1")
    if problems:
        raise ConfigInvalid("; ".join(problems))


def apply_env_seed(cfg: PipelineConfig) -> PipelineConfig:
    env = os.environ.get(ENV_SEED)
    if env is None:
        return cfg
    try:
        return replace(cfg, seed=int(env))
    except ValueError as exc:
        raise ConfigInvalid(f"{ENV_SEED}={env!r} is not an integer") from exc


def config_hash(cfg: PipelineConfig) -> str:
    """Stable digest embedded in attack reports for reproducibility."""
    blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
