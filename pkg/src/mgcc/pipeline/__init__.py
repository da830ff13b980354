from mgcc.pipeline.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mgcc.pipeline.generation import generate_image
from mgcc.pipeline.generator import MockGenerator, decode_rectangles, render_layout
from mgcc.pipeline.model import MGCCModel, TrainableParams, build_model
from mgcc.pipeline.synthetic import SyntheticStory, make_synthetic_dataset
from mgcc.pipeline.training import LossReport, OptimizerState, TrainingError, train, training_step

__all__ = [
    "CheckpointError",
    "LossReport",
    "MGCCModel",
    "MockGenerator",
    "OptimizerState",
    "SyntheticStory",
    "TrainableParams",
    "TrainingError",
    "build_model",
    "decode_rectangles",
    "generate_image",
    "load_checkpoint",
    "make_synthetic_dataset",
    "render_layout",
    "save_checkpoint",
    "train",
    "training_step",
]
