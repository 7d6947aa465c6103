"""Two-pathway video classifier: a holistic 3D-convolutional pathway and a
multi-scale temporal relation pathway, fused by feature-wise modulation.

Everything runs on the small reverse-mode autodiff core in ``twopath.core``.
"""
from . import core
from .config import RunConfig
from .data import ClipDataset, SyntheticTaskSpec, VideoClip, read_clip, synthetic_dataset, write_clip
from .metrics import EvalReport, confusion_matrix
from .model import ModelConfig, TwoPathwayNet
from .training import TrainPlan, evaluate, load_checkpoint, make_plan, run_plan, save_checkpoint

__version__ = "0.1.0"
