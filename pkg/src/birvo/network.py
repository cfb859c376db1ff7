"""The pose-regression model: conv encoder -> bidirectional LSTM -> FC head.

An input is a time-ordered stack of adjacent frame pairs [T, 6, H, W];
the output is one 6-DoF relative pose per pair, ordered
[t_x, t_y, t_z, roll, pitch, yaw] (meters, radians), each row the motion
from frame i to frame i+1 expressed in frame i.

Weight matrices are stored [out_features, in_features] and applied as
``x @ W.T + b``; see `ModelParams.named_parameters` for the checkpoint
naming scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, conv2d_output_size

# Nine-layer convolutional encoder over stacked frame pairs:
# (kernel, padding, stride, out_channels) per layer.
DEFAULT_CONV_LAYERS = (
    (7, 3, 2, 64),
    (5, 2, 2, 128),
    (5, 2, 2, 256),
    (3, 1, 1, 256),
    (3, 1, 2, 512),
    (3, 1, 1, 512),
    (3, 1, 2, 512),
    (3, 1, 1, 512),
    (3, 1, 2, 1024),
)

# Desk-scale encoder for 48x160 inputs (same stride pattern, thin channels).
TINY_CONV_LAYERS = (
    (7, 3, 2, 8),
    (5, 2, 2, 16),
    (3, 1, 2, 32),
    (3, 1, 2, 32),
)


@dataclass(frozen=True)
class ConvLayerSpec:
    kernel_size: int
    padding: int
    stride: int
    out_channels: int

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"invalid conv layer spec {self}")


def _default_layers():
    return tuple(ConvLayerSpec(*spec) for spec in DEFAULT_CONV_LAYERS)


@dataclass(frozen=True)
class ConvStackConfig:
    """Layer specs of the convolutional encoder; defaults to the full
    nine-layer stack above."""

    layers: tuple = field(default_factory=_default_layers)
    input_channels: int = 6
    leaky_slope: float = 0.1

    @classmethod
    def from_specs(cls, specs, input_channels=6, leaky_slope=0.1):
        return cls(tuple(ConvLayerSpec(*s) for s in specs), input_channels, leaky_slope)

    def output_shapes(self, image_size):
        """Per-layer (channels, height, width); raises ConfigError naming
        the first layer whose spatial output collapses below 1."""
        h, w = image_size
        shapes = []
        for i, layer in enumerate(self.layers):
            h = conv2d_output_size(h, layer.kernel_size, layer.stride, layer.padding)
            w = conv2d_output_size(w, layer.kernel_size, layer.stride, layer.padding)
            if h < 1 or w < 1:
                raise ConfigError(
                    f"conv{i + 1}: spatial output collapses to {h}x{w} "
                    f"for input {image_size[0]}x{image_size[1]}"
                )
            shapes.append((layer.out_channels, h, w))
        return shapes

    def feature_size(self, image_size):
        """Flattened per-timestep width after the final layer."""
        c, h, w = self.output_shapes(image_size)[-1]
        return c * h * w


@dataclass(frozen=True)
class ModelConfig:
    """Sizes of every stage; image_size is (H, W) of a single frame."""

    image_size: tuple = (192, 640)
    conv: ConvStackConfig = field(default_factory=ConvStackConfig)
    hidden_size: int = 1000
    head_width: int = 256

    def feature_size(self):
        return self.conv.feature_size(self.image_size)

    def to_dict(self):
        return {
            "image_size": list(self.image_size),
            "conv_layers": [
                [l.kernel_size, l.padding, l.stride, l.out_channels] for l in self.conv.layers
            ],
            "input_channels": self.conv.input_channels,
            "leaky_slope": self.conv.leaky_slope,
            "hidden_size": self.hidden_size,
            "head_width": self.head_width,
        }

    @classmethod
    def from_dict(cls, d):
        conv = ConvStackConfig.from_specs(
            d["conv_layers"], d["input_channels"], d["leaky_slope"]
        )
        return cls(tuple(d["image_size"]), conv, d["hidden_size"], d["head_width"])


def tiny_model_config(hidden_size=32, head_width=64, image_size=(48, 160)):
    """Reference desk-scale configuration: thin 4-layer encoder on 48x160."""
    return ModelConfig(
        image_size=image_size,
        conv=ConvStackConfig.from_specs(TINY_CONV_LAYERS),
        hidden_size=hidden_size,
        head_width=head_width,
    )


@dataclass
class LSTMCellParams:
    """One direction's gate parameters over the joint input [x_t ; h_prev].

    Each gate matrix is [hidden_size, input_size + hidden_size]; gates are
    input (i), forget (f), cell candidate (g), output (o).
    """

    Wi: Tensor
    Wf: Tensor
    Wg: Tensor
    Wo: Tensor
    bi: Tensor
    bf: Tensor
    bg: Tensor
    bo: Tensor
    hidden_size: int

    def named(self, prefix):
        return [
            (f"{prefix}.Wi", self.Wi), (f"{prefix}.Wf", self.Wf),
            (f"{prefix}.Wg", self.Wg), (f"{prefix}.Wo", self.Wo),
            (f"{prefix}.bi", self.bi), (f"{prefix}.bf", self.bf),
            (f"{prefix}.bg", self.bg), (f"{prefix}.bo", self.bo),
        ]


@dataclass
class BiLSTMParams:
    """Both directions plus the output projection combining them.

    The projection produces the sequence output
    ``y_t = V @ A_t + Vp @ A'_t + b`` with V, Vp of shape
    [2*hidden, hidden], so y_t has width 2*hidden and feeds the head.
    """

    fwd: LSTMCellParams
    bwd: LSTMCellParams
    V: Tensor
    Vp: Tensor
    b: Tensor

    def named(self):
        return (
            self.fwd.named("bilstm.fwd")
            + self.bwd.named("bilstm.bwd")
            + [("bilstm.proj.V", self.V), ("bilstm.proj.Vp", self.Vp), ("bilstm.proj.b", self.b)]
        )

    def swapped(self):
        """Directions exchanged (cells and projection); used by the
        time-reversal symmetry property."""
        return BiLSTMParams(fwd=self.bwd, bwd=self.fwd, V=self.Vp, Vp=self.V, b=self.b)


@dataclass
class RegressionHeadParams:
    """Two fully connected layers: 2*hidden -> head_width -> 6."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    def named(self):
        return [
            ("head.fc1.weight", self.W1), ("head.fc1.bias", self.b1),
            ("head.fc2.weight", self.W2), ("head.fc2.bias", self.b2),
        ]


@dataclass
class ModelParams:
    """All weights plus the configuration they were built for."""

    config: ModelConfig
    conv: list  # [(weight [OC,C,KH,KW], bias [OC]), ...] per layer
    bilstm: BiLSTMParams
    head: RegressionHeadParams

    def named_parameters(self):
        """Ordered (name, tensor) pairs; the order and names are the
        checkpoint layout contract (convN.weight/bias, bilstm.fwd.Wi ...,
        bilstm.proj.V, head.fc1.weight ...)."""
        out = []
        for i, (w, b) in enumerate(self.conv, start=1):
            out.append((f"conv{i}.weight", w))
            out.append((f"conv{i}.bias", b))
        out.extend(self.bilstm.named())
        out.extend(self.head.named())
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def init_params(config, seed=0):
    """Fresh weights: uniform in ±sqrt(1/fan_in), forget-gate biases 1.0,
    all other biases 0. Reproducible per seed."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = np.sqrt(1.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    conv = []
    in_ch = config.conv.input_channels
    for layer in config.conv.layers:
        k = layer.kernel_size
        w = uniform((layer.out_channels, in_ch, k, k), fan_in=in_ch * k * k)
        conv.append((w, zeros(layer.out_channels)))
        in_ch = layer.out_channels

    feat = config.feature_size()
    hidden = config.hidden_size
    joint = feat + hidden

    def cell():
        return LSTMCellParams(
            Wi=uniform((hidden, joint), joint), Wf=uniform((hidden, joint), joint),
            Wg=uniform((hidden, joint), joint), Wo=uniform((hidden, joint), joint),
            bi=zeros(hidden), bf=Tensor(np.ones(hidden), requires_grad=True),
            bg=zeros(hidden), bo=zeros(hidden),
            hidden_size=hidden,
        )

    bilstm = BiLSTMParams(
        fwd=cell(), bwd=cell(),
        V=uniform((2 * hidden, hidden), hidden),
        Vp=uniform((2 * hidden, hidden), hidden),
        b=zeros(2 * hidden),
    )
    head = RegressionHeadParams(
        W1=uniform((config.head_width, 2 * hidden), 2 * hidden),
        b1=zeros(config.head_width),
        W2=uniform((6, config.head_width), config.head_width),
        b2=zeros(6),
    )
    return ModelParams(config=config, conv=conv, bilstm=bilstm, head=head)


# -- forward passes -------------------------------------------------------


def conv_encoder_forward(stacked_pairs, params):
    """Run the conv stack over [T, 6, H, W] and flatten to [T, F].

    Every layer is conv + leaky rectification; the final activation is
    flattened row-major (channels, then rows, then columns) per timestep.
    """
    x = stacked_pairs if isinstance(stacked_pairs, Tensor) else Tensor(stacked_pairs)
    if x.data.ndim != 4:
        raise ShapeError(f"conv_encoder_forward: expected [T,C,H,W], got {x.data.shape}")
    cfg = params.config
    t = x.data.shape[0]
    if x.data.shape[1] != cfg.conv.input_channels:
        raise ShapeError(
            f"conv_encoder_forward: expected {cfg.conv.input_channels} channels, "
            f"got {x.data.shape[1]}"
        )
    # Validates spatial sizes up front so a collapse names its layer.
    shapes = cfg.conv.output_shapes(x.data.shape[2:])
    for layer, (w, b) in zip(cfg.conv.layers, params.conv):
        x = T.conv2d(x, w, stride=layer.stride, padding=layer.padding)
        x = x + T.reshape(b, (layer.out_channels, 1, 1))
        x = T.leaky_relu(x, cfg.conv.leaky_slope)
    c, h, w_ = shapes[-1]
    return T.reshape(x, (t, c * h * w_))


def rnn_reference_step(x_t, h_prev, W_hh, W_xh, b_h, W_yh, b_y):
    """One step of the plain (ungated) recurrence, kept as a reference
    cell for tests: h_t = tanh(W_hh h_prev + W_xh x_t + b_h),
    y_t = W_yh h_t + b_y. Not part of the deployed model."""
    h = T.tanh(T.matmul(h_prev, T.transpose(W_hh)) + T.matmul(x_t, T.transpose(W_xh)) + b_h)
    y = T.matmul(h, T.transpose(W_yh)) + b_y
    return h, y


def lstm_cell_step(x_t, state, params):
    """Standard gated cell over z = [x_t ; h_prev]:

    i, f, o = sigmoid gates, g = tanh candidate,
    c_t = f*c_prev + i*g,  h_t = o*tanh(c_t).
    """
    h_prev, c_prev = state
    z = T.concat_channels([x_t, h_prev])
    i = T.sigmoid(T.matmul(z, T.transpose(params.Wi)) + params.bi)
    f = T.sigmoid(T.matmul(z, T.transpose(params.Wf)) + params.bf)
    g = T.tanh(T.matmul(z, T.transpose(params.Wg)) + params.bg)
    o = T.sigmoid(T.matmul(z, T.transpose(params.Wo)) + params.bo)
    c_t = f * c_prev + i * g
    h_t = o * T.tanh(c_t)
    return h_t, c_t


def bilstm_forward(features, params):
    """Bidirectional recurrence over [T, F].

    The forward cell consumes timesteps in order, the backward cell in
    reverse, both from zero initial state; at each t the two hidden states
    belong to the SAME timestep. Returns (hidden [T, 2*hidden], y [T, 2*hidden])
    where y_t = V @ A_t + Vp @ A'_t + b (linear combination).
    """
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.data.ndim != 2:
        raise ShapeError(f"bilstm_forward: expected [T,F], got {x.data.shape}")
    steps = x.data.shape[0]
    if steps < 1:
        raise ContractError("bilstm_forward: empty sequence")
    hidden = params.fwd.hidden_size

    def run(cell, order):
        h = Tensor(np.zeros((1, hidden)))
        c = Tensor(np.zeros((1, hidden)))
        rows = [None] * steps
        for t in order:
            h, c = lstm_cell_step(T.slice_time(x, t), (h, c), cell)
            rows[t] = h
        return rows

    fwd_rows = run(params.fwd, range(steps))
    bwd_rows = run(params.bwd, range(steps - 1, -1, -1))
    a_fwd = T.concat(fwd_rows, axis=0)
    a_bwd = T.concat(bwd_rows, axis=0)
    hidden_seq = T.concat_channels([a_fwd, a_bwd])
    y = T.matmul(a_fwd, T.transpose(params.V)) + T.matmul(a_bwd, T.transpose(params.Vp)) + params.b
    return hidden_seq, y


def model_forward(stacked_pairs, params, dropout_mask=None):
    """Full forward pass: encoder -> Bi-LSTM -> FC head -> [T, 6] poses.

    `dropout_mask`, when given, multiplies the Bi-LSTM output sequence
    elementwise (shape [T, 2*hidden]; see training.make_dropout_mask).
    """
    features = conv_encoder_forward(stacked_pairs, params)
    _, y = bilstm_forward(features, params.bilstm)
    if dropout_mask is not None:
        y = T.dropout_mask_apply(y, dropout_mask)
    head = params.head
    h1 = T.leaky_relu(T.matmul(y, T.transpose(head.W1)) + head.b1, params.config.conv.leaky_slope)
    return T.matmul(h1, T.transpose(head.W2)) + head.b2
