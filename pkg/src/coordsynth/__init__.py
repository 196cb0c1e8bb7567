"""Coordinated multi-character motion synthesis from a two-character diffusion prior."""
import os as _os

# the one environment knob: BLAS thread count, honoured only if set before numpy loads
if _os.environ.get("COORDSYNTH_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["COORDSYNTH_THREADS"])

from .coordination import SceneConfig, run_scene
from .generator import Denoiser, NoiseSchedule, TrainConfig, load_checkpoint, sample, train_denoiser
from .guidance import ConstraintSet
from .motion import ClipSet, SceneTimeline, hip_distance, load_scene, peak_jerk, save_scene
from .planner import PlannerPolicy, RLConfig, train_policy
from .synth_data import Corpus, build_corpus, get_style

__all__ = [
    "ClipSet", "ConstraintSet", "Corpus", "Denoiser", "NoiseSchedule", "PlannerPolicy", "RLConfig",
    "SceneConfig", "SceneTimeline", "TrainConfig", "build_corpus", "get_style", "hip_distance",
    "load_checkpoint", "load_scene", "peak_jerk", "run_scene", "sample", "save_scene", "train_denoiser",
    "train_policy",
]
__version__ = "0.1.0"
