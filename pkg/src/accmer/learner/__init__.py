from .learner import Batch, Learner, UpdateStats, epsilon_at, load_params, save_params
from .optim import Adam
from .train import RunResult, evaluate, mann_kendall, read_curves, train_run, write_curves

__all__ = [
    "Adam", "Batch", "Learner", "RunResult", "UpdateStats", "epsilon_at", "evaluate",
    "load_params", "mann_kendall", "read_curves", "save_params", "train_run", "write_curves",
]
