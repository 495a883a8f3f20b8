"""Multi-station earthquake detection with spectral structure-learning graph convolutions."""

from .autodiff import Tensor, backward, grad_check, no_grad
from .evaluate import optimal_mdp, roc_curve, tpr_fpr_at_mdp
from .model import Architecture, ModelParams, baseline_gcn_forward, forward, init_model, load_checkpoint, save_checkpoint
from .train import TrainConfig, bce_loss, train

__version__ = "0.1.0"
