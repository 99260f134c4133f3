"""Soft actor-critic with demonstrations and reward relabeling on a sparse-reward planar reacher."""

from .env import EnvConfig, ReacherEnv
from .expert import ExpertConfig, generate_demos, load_demos, save_demos
from .replay import Episode, PerConfig, ReplayStore, relabel_demo, relabel_success
from .sac import SacConfig, run_training, train_step

__version__ = "0.1.0"

__all__ = [
    "EnvConfig", "ReacherEnv", "ExpertConfig", "generate_demos", "load_demos", "save_demos",
    "Episode", "PerConfig", "ReplayStore", "relabel_demo", "relabel_success",
    "SacConfig", "run_training", "train_step",
]
