"""Topologically regularised multiple-instance learning on a small numpy autodiff core."""
from .datasets import Bag, BagDatasetSpec, build_bags, gen_toy, load_bag_csv, load_idx, save_bag_csv
from .metrics import MetricsReport, classification_metrics
from .milcore import EncoderConfig, MILModel, ModelConfig, load_checkpoint, save_checkpoint, total_loss
from .persistence import diagram_from_pairing, euclidean_distance_matrix, vr_persistence_0d
from .toporeg import topo_loss
from .training import TrainConfig, evaluate, k_fold, scarcity_sweep, train

__version__ = "0.1.0"
