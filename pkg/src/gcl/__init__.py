"""Continual node classification on graphs with a width-adapting controller
and dark experience replay."""

from .autodiff import Adam, Tensor, backward
from .childnet import ChildNet
from .controller import ActionSpace, Baseline, LstmPolicy
from .data import DatasetBundle, SbmParams, generate_sbm, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .graph import CsrGraph, from_edge_list, gcn_normalize
from .harness import TrainConfig, aa, af, run_trial, run_trials, summarize
from .replay import Reservoir

__version__ = "0.1.0"

__all__ = [
    "Adam", "Tensor", "backward", "ChildNet", "ActionSpace", "Baseline", "LstmPolicy",
    "DatasetBundle", "SbmParams", "generate_sbm", "load_checkpoint", "load_dataset",
    "save_checkpoint", "save_dataset", "CsrGraph", "from_edge_list", "gcn_normalize",
    "TrainConfig", "aa", "af", "run_trial", "run_trials", "summarize", "Reservoir",
]
