"""Monocular visual odometry from image sequences.

A numpy library implementing the full pipeline: a small reverse-mode
autodiff tensor core, a recurrent convolutional pose-regression network,
SE(3) trajectory geometry, synthetic training data, a training loop, and
KITTI-style trajectory error metrics. See README.md for a tour and the
demos/ directory for narrative walkthroughs.
"""

from .errors import (
    BirvoError,
    ConfigError,
    ContractError,
    NumericError,
    ParseError,
    ShapeError,
)
from .geometry import (
    SE3,
    Pose6DoF,
    Trajectory,
    compose_trajectory,
    euler_to_rotation,
    relative_pose,
    rotation_to_euler,
    trajectory_to_relatives,
)
from .network import (
    BiLSTMParams,
    ConvStackConfig,
    LSTMCellParams,
    ModelConfig,
    ModelParams,
    RegressionHeadParams,
    bilstm_forward,
    conv_encoder_forward,
    init_params,
    lstm_cell_step,
    model_forward,
    rnn_reference_step,
    tiny_model_config,
)
from .tensor import Tensor, backward, finite_difference_check

__version__ = "0.1.0"
