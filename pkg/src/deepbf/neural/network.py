"""The deep beamformer network: configuration, parameters, forward and backward."""

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as F

__all__ = ["NetworkConfig", "ConvLayer", "Network", "xavier_init", "forward", "ShapeError"]


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of the deep beamformer.

    Every layer but the last is a 3x3 convolution followed by batch
    normalization and an activation; the last is a 1x1 convolution onto
    ``output_channels`` (I and Q). The raw input is concatenated onto the
    features entering layer ``skip_concat_at``. ``activation="identity"`` and
    ``batchnorm=False`` give a linear network for gradient testing.
    """

    num_conv_layers: int = 7
    hidden_channels: int = 32
    input_channels: int = 64
    output_channels: int = 2
    depth_window: int = 3
    skip_concat_at: int = -1
    batchnorm_epsilon: float = 1e-5
    batchnorm_momentum: float = 0.9
    activation: str = "relu"
    batchnorm: bool = True

    def __post_init__(self):
        if self.num_conv_layers < 2:
            raise ValueError("num_conv_layers must be >= 2")
        if self.skip_concat_at < 0:
            object.__setattr__(self, "skip_concat_at", self.num_conv_layers - 2)
        if not 1 <= self.skip_concat_at <= self.num_conv_layers - 1:
            raise ValueError("skip_concat_at must index a layer after the first")
        if min(self.hidden_channels, self.input_channels, self.output_channels) < 1:
            raise ValueError("channel counts must be positive")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def desk(cls, **kw):
        """Reduced preset that trains in minutes on a CPU."""
        return cls(**{"num_conv_layers": 7, "hidden_channels": 32, **kw})

    @classmethod
    def full(cls, **kw):
        """29 layers: 28 of 3x3 and a final 1x1."""
        return cls(**{"num_conv_layers": 29, "hidden_channels": 64, **kw})

    def kernel_size(self, index):
        return 1 if index == self.num_conv_layers - 1 else 3

    def layer_channels(self, index):
        """``(in_channels, out_channels)`` of layer ``index``."""
        last = self.num_conv_layers - 1
        cin = self.input_channels if index == 0 else self.hidden_channels
        if index == self.skip_concat_at:
            cin += self.input_channels
        cout = self.output_channels if index == last else self.hidden_channels
        return cin, cout

    def to_dict(self):
        return asdict(self)


@dataclass
class ConvLayer:
    weight: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray = None
    beta: np.ndarray = None
    running_mean: np.ndarray = None
    running_var: np.ndarray = None

    @property
    def has_batchnorm(self):
        return self.gamma is not None

    def param_names(self):
        names = ["weight", "bias"]
        if self.has_batchnorm:
            names += ["gamma", "beta"]
        return names

    def state_names(self):
        return self.param_names() + (["running_mean", "running_var"] if self.has_batchnorm else [])


@dataclass
class Network:
    config: NetworkConfig
    layers: list
    mode: str = "train"
    _caches: list = field(default=None, repr=False)

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def copy(self):
        return Network(self.config, copy.deepcopy(self.layers), self.mode)

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name in layer.param_names():
                yield (i, name), getattr(layer, name)

    def named_state(self):
        for i, layer in enumerate(self.layers):
            for name in layer.state_names():
                yield (i, name), getattr(layer, name)

    def num_parameters(self):
        return sum(p.size for _, p in self.named_parameters())

    def __call__(self, x):
        return forward(self, x)

    def forward(self, x, update_stats=True):
        return forward(self, x, update_stats=update_stats)

    def backward(self, grad_out):
        return backward(self, grad_out)


def xavier_init(config, seed=0, dtype=np.float32):
    """Gaussian Xavier initialization: ``N(0, 2 / (fan_in + fan_out))``.

    Biases and shifts start at 0, scales at 1, running statistics at (0, 1).
    """
    rng = np.random.default_rng(seed)
    layers = []
    last = config.num_conv_layers - 1
    for i in range(config.num_conv_layers):
        cin, cout = config.layer_channels(i)
        k = config.kernel_size(i)
        std = np.sqrt(2.0 / (cin * k * k + cout * k * k))
        layer = ConvLayer(
            weight=(rng.standard_normal((cout, cin, k, k)) * std).astype(dtype),
            bias=np.zeros(cout, dtype=dtype),
        )
        if i != last and config.batchnorm:
            layer.gamma = np.ones(cout, dtype=dtype)
            layer.beta = np.zeros(cout, dtype=dtype)
            layer.running_mean = np.zeros(cout, dtype=dtype)
            layer.running_var = np.ones(cout, dtype=dtype)
        layers.append(layer)
    return Network(config, layers)


def _check_input(net, x):
    cfg = net.config
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected (C, H, W) or (B, C, H, W), got {x.shape}")
    c, h = x.shape[-3], x.shape[-2]
    if c != cfg.input_channels or h != cfg.depth_window:
        raise ShapeError(
            f"input {x.shape} does not match {cfg.input_channels} channels x "
            f"{cfg.depth_window} depths")


def forward(net, x, update_stats=True):
    """Run the network on ``(C, 3, L)`` or ``(B, C, 3, L)`` input.

    In training mode the intermediate values needed by :func:`backward` are
    kept on the network and, when ``update_stats``, the batch-norm running
    statistics are updated.
    """
    x = np.asarray(x)
    _check_input(net, x)
    batched = x.ndim == 4
    dtype = net.layers[0].weight.dtype
    inp = F.to_channel_major(x.astype(dtype, copy=False))
    cfg = net.config
    train = net.mode == "train"
    caches = []
    h = inp
    last = cfg.num_conv_layers - 1
    for i, layer in enumerate(net.layers):
        if i == cfg.skip_concat_at:
            h = np.concatenate([h, inp], axis=0)
        h, conv_cache = F.conv2d(h, layer.weight, layer.bias)
        entry = {"conv": conv_cache}
        if i != last and layer.has_batchnorm:
            h, stats, bn_cache = F.batchnorm(
                h, layer.gamma, layer.beta, layer.running_mean, layer.running_var,
                train, cfg.batchnorm_epsilon, cfg.batchnorm_momentum)
            if train and update_stats:
                layer.running_mean = stats[0].astype(dtype)
                layer.running_var = stats[1].astype(dtype)
            entry["bn"] = bn_cache
        if i != last and cfg.activation == "relu":
            h, entry["relu"] = F.relu(h)
        caches.append(entry)
    net._caches = caches
    return F.from_channel_major(h, batched)


def backward(net, grad_out):
    """Backpropagate ``grad_out`` (same layout as the forward output).

    Returns
    -------
    grads : dict
        ``{(layer_index, name): gradient}`` for every trainable parameter.
    grad_input : ndarray
        Gradient with respect to the network input, in the input's layout.
    """
    if net._caches is None:
        raise RuntimeError("backward called before forward")
    grad_out = np.asarray(grad_out)
    batched = grad_out.ndim == 4
    g = F.to_channel_major(grad_out.astype(net.layers[0].weight.dtype, copy=False))
    cfg = net.config
    grads = {}
    grad_inp = None
    for i in reversed(range(len(net.layers))):
        entry = net._caches[i]
        if "relu" in entry:
            g = F.relu_backward(g, entry["relu"])
        if "bn" in entry:
            g, grads[(i, "gamma")], grads[(i, "beta")] = F.batchnorm_backward(g, entry["bn"])
        g, grads[(i, "weight")], grads[(i, "bias")] = F.conv2d_backward(g, entry["conv"])
        if i == cfg.skip_concat_at:
            grad_inp = g[-cfg.input_channels:]
            g = g[:-cfg.input_channels]
    grad_inp = g if grad_inp is None else grad_inp + g
    return grads, F.from_channel_major(grad_inp, batched)
