"""Named ablation presets.

``sac_demo`` is the baseline: 200 demonstrations in a single PER buffer held
at 10% demo data, 1000 random interactions, 3000 pretraining iterations,
replay ratio 32 with batch 64, L2 on actor and critic, and two hidden layers
of 128 units so a 4-seed suite fits in roughly an hour on one core. Every other preset
toggles mechanisms on top of it (or, for the no-demonstration runs, removes
the demonstrations and pretraining).
"""

from __future__ import annotations

from dataclasses import replace

from ..sac import SacConfig
from .config import ConfigError, ExperimentConfig


DESK_HIDDEN = (128, 128)


def _base() -> SacConfig:
    return SacConfig(hidden=DESK_HIDDEN)


def _star(cfg: SacConfig) -> SacConfig:
    return replace(cfg, use_nstep=True, use_bc=True)


def _sacr2(cfg: SacConfig, b: float = 5.0) -> SacConfig:
    return replace(cfg, b=b, demo_bonus=True, relabel_success=True)


def _nodemo(cfg: SacConfig) -> SacConfig:
    return replace(cfg, n_demos=0, pretrain_iters=0, maintain_demo_ratio=False)


PRESETS = {
    "sac_demo": lambda: _base(),
    "sac_demo_nstep": lambda: replace(_base(), use_nstep=True),
    "sac_demo_bc": lambda: replace(_base(), use_bc=True),
    "sac_demo_star": lambda: _star(_base()),
    "sacr2_b1": lambda: _sacr2(_base(), 1.0),
    "sacr2_b5": lambda: _sacr2(_base(), 5.0),
    "sacr2_b10": lambda: _sacr2(_base(), 10.0),
    "sacr2_norelabel_b5": lambda: replace(_base(), b=5.0, demo_bonus=True, relabel_success=False),
    "sacr2_norelabel_b10": lambda: replace(_base(), b=10.0, demo_bonus=True, relabel_success=False),
    "two_buffers": lambda: replace(_base(), buffer_mode="dual", demo_fraction=0.10),
    "reset_demo": lambda: replace(_base(), reset_to_demo_prob=0.10),
    "pretrain_heavy": lambda: replace(_base(), n_demos=800, pretrain_iters=10_000),
    "pretrain_drastic": lambda: replace(_base(), n_demos=2000, pretrain_iters=20_000),
    "per_modified": lambda: replace(_base(), per_mode="modified"),
    "sacr2_star": lambda: _sacr2(_star(_base()), 5.0),
    "sac_plain": lambda: _nodemo(_base()),
    "sacr2_nodemo": lambda: _sacr2(_nodemo(_base()), 5.0),
}


def preset_names() -> list:
    return list(PRESETS)


def preset(name: str) -> ExperimentConfig:
    try:
        sac = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return ExperimentConfig(name=name, sac=sac)
