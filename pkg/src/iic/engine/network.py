"""Desk-scale base networks with banks of softmax sub-heads."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .functional import batch_norm, conv2d, dense, same_padding

PRESETS = ("mlp-small", "cnn-small")


@dataclass
class NetworkConfig:
    base: str = "mlp-small"
    in_shape: tuple = (2,)
    k_gt: int = 3
    k_aux: int = 9  # 0 disables the auxiliary overclustering heads
    h: int = 5
    dense_output: bool = False
    dtype: str = "float32"
    seed: int = 0
    hidden: int = 64


class Dense:
    def __init__(self, d_in, d_out, rng, dtype):
        bound = np.sqrt(6.0 / d_in)
        self.weight = ag.param(rng.uniform(-bound, bound, (d_in, d_out)).astype(dtype))
        self.bias = ag.param(np.zeros(d_out, dtype=dtype))

    def __call__(self, x):
        return dense(x, self.weight, self.bias)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class Conv:
    def __init__(self, c_in, c_out, rng, dtype, stride=1, k=3):
        bound = np.sqrt(6.0 / (c_in * k * k))
        self.weight = ag.param(rng.uniform(-bound, bound, (c_out, c_in, k, k)).astype(dtype))
        self.bias = ag.param(np.zeros(c_out, dtype=dtype))
        self.stride = stride
        self.k = k

    def __call__(self, x):
        H, W = x.shape[2:]
        if self.stride == 1:
            p = self.k // 2
            pads = (p, p, p, p)
        else:
            pads = same_padding(H, self.k, self.stride) + same_padding(W, self.k, self.stride)
        out = conv2d(x, self.weight, self.stride, pads)
        return out + ag.reshape(self.bias, (1, -1, 1, 1))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class BatchNorm:
    def __init__(self, channels, dtype):
        self.gamma = ag.param(np.ones(channels, dtype=dtype))
        self.beta = ag.param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)

    def __call__(self, x, training):
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, training)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class HeadBank:
    """h main sub-heads at k_gt clusters and h auxiliary sub-heads at k_aux."""

    def __init__(self, d_in, k_gt, k_aux, h, rng, dtype):
        if h < 1:
            raise ValueError(f"need at least one sub-head, got h={h}")
        if k_gt < 2:
            raise ValueError(f"k_gt must be >= 2, got {k_gt}")
        if k_aux and k_aux <= k_gt:
            raise ValueError(f"k_aux ({k_aux}) must exceed k_gt ({k_gt})")
        self.main_heads = [Dense(d_in, k_gt, rng, dtype) for _ in range(h)]
        self.aux_heads = [Dense(d_in, k_aux, rng, dtype) for _ in range(h)] if k_aux else []

    def heads(self, kind):
        return self.main_heads if kind == "main" else self.aux_heads

    def __call__(self, features, kind):
        return [ag.softmax(head(features), axis=1) for head in self.heads(kind)]


class Network:
    def __init__(self, config):
        if config.base not in PRESETS:
            raise ValueError(f"unknown base preset {config.base!r}; choose from {PRESETS}")
        self.config = config
        rng = np.random.default_rng(config.seed)
        dtype = np.dtype(config.dtype)
        self.layers = {}
        if config.base == "mlp-small":
            if len(config.in_shape) != 1:
                raise ValueError("mlp-small expects vector inputs")
            self.layers["fc1"] = Dense(config.in_shape[0], config.hidden, rng, dtype)
            self.layers["fc2"] = Dense(config.hidden, config.hidden, rng, dtype)
            feat = config.hidden
        else:
            if len(config.in_shape) != 3:
                raise ValueError("cnn-small expects c x H x W inputs")
            c_in = config.in_shape[0]
            self.layers["conv1"] = Conv(c_in, 32, rng, dtype)
            self.layers["bn1"] = BatchNorm(32, dtype)
            self.layers["conv2"] = Conv(32, 64, rng, dtype, stride=2)
            self.layers["bn2"] = BatchNorm(64, dtype)
            self.layers["conv3"] = Conv(64, 64, rng, dtype, stride=2)
            self.layers["bn3"] = BatchNorm(64, dtype)
            feat = 64
        self.heads = HeadBank(feat, config.k_gt, config.k_aux, config.h, rng, dtype)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def features(self, x, training=False):
        x = ag.const(x)
        if x.value.dtype != self.dtype:
            x = ag.const(x.value.astype(self.dtype))
        L = self.layers
        if self.config.base == "mlp-small":
            return ag.relu(L["fc2"](ag.relu(L["fc1"](x))))
        for i in (1, 2, 3):
            x = ag.relu(L[f"bn{i}"](L[f"conv{i}"](x), training))
        if self.config.dense_output:
            return x
        return ag.mean(x, axis=(2, 3))

    def forward(self, x, training=False, kinds=("main", "aux")):
        feats = self.features(x, training)
        return {kind: self.heads(feats, kind) for kind in kinds}

    def named_parameters(self):
        out = {}
        for name, layer in self.layers.items():
            for pname, p in layer.params().items():
                out[f"base.{name}.{pname}"] = p
        for kind in ("main", "aux"):
            for i, head in enumerate(self.heads.heads(kind)):
                for pname, p in head.params().items():
                    out[f"head.{kind}.{i}.{pname}"] = p
        return out

    def named_buffers(self):
        out = {}
        for name, layer in self.layers.items():
            if isinstance(layer, BatchNorm):
                for bname, b in layer.buffers().items():
                    out[f"base.{name}.{bname}"] = b
        return out

    def head_parameter_names(self, kind):
        return [n for n in self.named_parameters() if n.startswith(f"head.{kind}.")]

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def state_dict(self):
        state = {name: p.value for name, p in self.named_parameters().items()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state):
        params = self.named_parameters()
        buffers = self.named_buffers()
        for name, p in params.items():
            if name not in state:
                raise KeyError(f"checkpoint is missing {name}")
            arr = np.asarray(state[name])
            if arr.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.value.shape}")
            p.value = arr.astype(p.value.dtype).copy()
        for name, buf in buffers.items():
            if name not in state:
                raise KeyError(f"checkpoint is missing {name}")
            arr = np.asarray(state[name])
            if arr.shape != buf.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {buf.shape}")
            buf[...] = arr

    def num_parameters(self):
        return sum(p.value.size for p in self.named_parameters().values())


def build_network(config):
    return Network(config)
