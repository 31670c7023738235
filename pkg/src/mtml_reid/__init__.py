"""Multi-task multi-label learning for intra-camera supervised person re-identification."""
from .association import MultiLabelSet, apply_multilabels, cyclic_match, discover_all
from .datagen import ICSDataset, SynthConfig, generate_synthetic, load_dataset, sample_batch, save_dataset
from .evaluation import EvalReport, build_problem, evaluate
from .model import ModelConfig, ModelParams, init_params, load_checkpoint, save_checkpoint
from .objective import LossReport, LossSpec
from .trainer import TrainConfig, TrainState, pretrain_mt, train_mtml

__version__ = "0.1.0"
