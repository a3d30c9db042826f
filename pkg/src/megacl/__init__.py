"""Episodic-memory continual learning: GEM, A-GEM, MEGA-I and MEGA-II update
rules on a from-scratch MLP, with task-stream generators and metrics."""

from .continuum import RunConfig, RunResult, run_continuum, run_multitask, search_epsilon
from .memory import EmptyMemoryError, EpisodicMemory
from .mixing import (MixDecision, MixInputs, cos_theta_closed_forms, mega2_angle, mix_agem, mix_gem,
                     mix_mega1, mix_mega2, mix_van, solve_coefficients)
from .net import Batch, NetworkSpec, evaluate, init_params, loss_and_grad, sgd_step
from .nqp import solve_nqp
from .tasks import StreamConfig, TaskSpec

__version__ = "0.1.0"

__all__ = [
    "Batch", "EmptyMemoryError", "EpisodicMemory", "MixDecision", "MixInputs", "NetworkSpec", "RunConfig",
    "RunResult", "StreamConfig", "TaskSpec", "cos_theta_closed_forms", "evaluate", "init_params", "loss_and_grad",
    "mega2_angle", "mix_agem", "mix_gem", "mix_mega1", "mix_mega2", "mix_van", "run_continuum", "run_multitask",
    "search_epsilon", "sgd_step", "solve_coefficients", "solve_nqp",
]
