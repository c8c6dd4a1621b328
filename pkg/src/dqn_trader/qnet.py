"""Convolutional Q-network with hand-written forward and backward passes.

Tensors are channels-last: a batch of history blocks has shape
``(n, window, assets, features)`` and is treated as a single-channel volume
``(n, depth, height, width, 1)``. Convolutions are valid (no padding) and
strided; there is no pooling.
"""
from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class BackwardStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    filter: tuple[int, int, int]
    stride: tuple[int, int, int]
    filters: int

    def __str__(self) -> str:
        f = "x".join(map(str, self.filter))
        s = "x".join(map(str, self.stride))
        return f"{f}:{s}:{self.filters}"

    @classmethod
    def parse(cls, text: str) -> "ConvSpec":
        """``"6x2x3:1x1x1:32"`` -> filter, stride, number of filters."""
        try:
            f, s, n = text.strip().split(":")
            filt = tuple(int(v) for v in f.split("x"))
            stride = tuple(int(v) for v in s.split("x"))
            spec = cls(filt, stride, int(n))  # type: ignore[arg-type]
        except ValueError:
            raise ValueError(f"bad conv layer spec {text!r}, expected like 6x2x3:1x1x1:32") from None
        if len(spec.filter) != 3 or len(spec.stride) != 3 or min(*spec.filter, *spec.stride, spec.filters) < 1:
            raise ValueError(f"bad conv layer spec {text!r}")
        return spec


DEFAULT_CONV = (
    ConvSpec((6, 2, 3), (1, 1, 1), 32),
    ConvSpec((5, 4, 4), (2, 1, 1), 64),
    ConvSpec((3, 3, 3), (2, 1, 1), 64),
)
DEFAULT_FC_UNITS = 512


def conv_output_shape(in_shape, filt, stride) -> tuple[int, ...]:
    out = []
    for n, f, s in zip(in_shape, filt, stride):
        if n < f:
            raise ShapeError(f"input extent {tuple(in_shape)} smaller than filter {tuple(filt)}")
        out.append((n - f) // s + 1)
    return tuple(out)


def relu(z):
    return np.maximum(z, 0.0)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


ACTIVATIONS = ("relu", "sigmoid", "linear")


def _activate(z, kind):
    if kind == "relu":
        return relu(z)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(dout, z, a, kind):
    if kind == "relu":
        return dout * (z > 0)
    if kind == "sigmoid":
        return dout * a * (1.0 - a)
    return dout


class Conv3D:
    """Valid strided 3D cross-correlation + bias + activation.

    ``weights`` has shape ``(filters, in_channels, d, h, w)``.
    """

    def __init__(self, in_channels: int, spec: ConvSpec, activation: str = "relu", rng=None):
        self.spec = spec
        self.in_channels = in_channels
        self.activation = activation
        fan_in = in_channels * int(np.prod(spec.filter))
        rng = np.random.default_rng() if rng is None else rng
        limit = np.sqrt(6.0 / fan_in)
        self.weights = rng.uniform(-limit, limit, (spec.filters, in_channels, *spec.filter))
        self.biases = np.zeros(spec.filters)
        self._cache = None

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "biases": self.biases}

    def _wmat(self) -> np.ndarray:
        # (filters, d*h*w*C), matching the column order of the windows
        return self.weights.transpose(0, 2, 3, 4, 1).reshape(self.spec.filters, -1)

    def output_shape(self, in_shape):
        *spatial, c = in_shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} channels, got {c}")
        return (*conv_output_shape(spatial, self.spec.filter, self.spec.stride), self.spec.filters)

    def forward(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        od, oh, ow, nf = self.output_shape(x.shape[1:])
        sd, sh, sw = self.spec.stride
        x = np.ascontiguousarray(x)
        bn, bd, bh, bw, bc = x.strides
        # channel axis innermost keeps the im2col copy contiguous
        win = as_strided(
            x,
            shape=(n, od, oh, ow, *self.spec.filter, x.shape[4]),
            strides=(bn, bd * sd, bh * sh, bw * sw, bd, bh, bw, bc),
            writeable=False,
        )
        cols = win.reshape(n * od * oh * ow, -1)
        wmat = self._wmat()
        z = (cols @ wmat.T + self.biases).reshape(n, od, oh, ow, nf)
        a = _activate(z, self.activation)
        self._cache = (x.shape, cols, z, a)
        return a

    def backward(self, dout: np.ndarray, need_dx: bool = True):
        """Returns ``(dx, {"weights": dW, "biases": db})``; ``dx`` is None when not needed."""
        if self._cache is None:
            raise BackwardStateError("Conv3D.backward called before forward")
        x_shape, cols, z, a = self._cache
        nf = self.spec.filters
        dz = _activation_grad(dout, z, a, self.activation)
        dzm = dz.reshape(-1, nf)
        fd, fh, fw = self.spec.filter
        dw = (dzm.T @ cols).reshape(nf, fd, fh, fw, self.in_channels)
        grads = {
            "weights": np.ascontiguousarray(dw.transpose(0, 4, 1, 2, 3)),
            "biases": dzm.sum(axis=0),
        }
        if not need_dx:
            return None, grads
        n, od, oh, ow, _ = dz.shape
        sd, sh, sw = self.spec.stride
        dcols = (dzm @ self._wmat()).reshape(n, od, oh, ow, fd, fh, fw, self.in_channels)
        dx = np.zeros(x_shape)
        for i, j, k in itertools.product(range(fd), range(fh), range(fw)):
            dx[:, i : i + sd * (od - 1) + 1 : sd, j : j + sh * (oh - 1) + 1 : sh, k : k + sw * (ow - 1) + 1 : sw, :] += (
                dcols[:, :, :, :, i, j, k, :]
            )
        return dx, grads


class Dense:
    def __init__(self, n_in: int, n_out: int, activation: str = "relu", rng=None):
        self.activation = activation
        rng = np.random.default_rng() if rng is None else rng
        if activation == "relu":
            limit = np.sqrt(6.0 / n_in)
        else:
            limit = np.sqrt(6.0 / (n_in + n_out))
        self.weights = rng.uniform(-limit, limit, (n_out, n_in))
        self.biases = np.zeros(n_out)
        self._cache = None

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "biases": self.biases}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.weights.shape[1]:
            raise ShapeError(f"dense layer expects {self.weights.shape[1]} inputs, got {x.shape[-1]}")
        z = x @ self.weights.T + self.biases
        a = _activate(z, self.activation)
        self._cache = (x, z, a)
        return a

    def backward(self, dout: np.ndarray):
        if self._cache is None:
            raise BackwardStateError("Dense.backward called before forward")
        x, z, a = self._cache
        dz = _activation_grad(dout, z, a, self.activation)
        grads = {"weights": dz.T @ x, "biases": dz.sum(axis=0)}
        return dz @ self.weights, grads


class QNetwork:
    """Three strided 3D convolutions, a hidden dense layer and one output per action.

    ``forward`` accepts one block ``(window, m, 9)`` or a batch
    ``(n, window, m, 9)``. ``output_activation`` is ``"sigmoid"`` (outputs in
    (0, 1)) or ``"linear"``.
    """

    def __init__(
        self,
        input_shape=(30, 8, 9),
        n_actions: int | None = None,
        conv_layers=DEFAULT_CONV,
        fc_units: int = DEFAULT_FC_UNITS,
        output_activation: str = "sigmoid",
        seed: int | None = 0,
    ):
        if output_activation not in ("sigmoid", "linear"):
            raise ValueError("output_activation must be 'sigmoid' or 'linear'")
        self.input_shape = tuple(int(v) for v in input_shape)
        self.n_actions = 2 * self.input_shape[1] + 1 if n_actions is None else int(n_actions)
        self.conv_specs = tuple(ConvSpec.parse(c) if isinstance(c, str) else c for c in conv_layers)
        self.fc_units = int(fc_units)
        self.output_activation = output_activation
        self.seed = seed
        rng = np.random.default_rng(seed)

        self.convs: list[Conv3D] = []
        shape = (*self.input_shape, 1)
        for spec in self.conv_specs:
            layer = Conv3D(shape[-1], spec, "relu", rng)
            shape = layer.output_shape(shape)
            self.convs.append(layer)
        self.flat_size = int(np.prod(shape))
        self.fc1 = Dense(self.flat_size, self.fc_units, "relu", rng)
        self.fc2 = Dense(self.fc_units, self.n_actions, output_activation, rng)
        self._last_batch = None

    @property
    def layers(self):
        return [*self.convs, self.fc1, self.fc2]

    def layer_names(self) -> list[str]:
        return [f"conv{i + 1}" for i in range(len(self.convs))] + ["fc1", "fc2"]

    def shapes(self) -> list[tuple[int, ...]]:
        """Activation shape after each layer (excluding the batch axis), flatten included."""
        out = []
        shape = (*self.input_shape, 1)
        for layer in self.convs:
            shape = layer.output_shape(shape)
            out.append(shape)
        out += [(self.flat_size,), (self.fc_units,), (self.n_actions,)]
        return out

    def params(self) -> dict[str, np.ndarray]:
        return {
            f"{name}.{k}": v
            for name, layer in zip(self.layer_names(), self.layers)
            for k, v in layer.params().items()
        }

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects blocks of shape {self.input_shape}, got {x.shape[1:]}")
        return x, single

    def forward(self, x) -> np.ndarray:
        x, single = self._as_batch(x)
        h = x[..., None]
        for layer in self.convs:
            h = layer.forward(h)
        self._conv_out_shape = h.shape
        h = self.fc1.forward(h.reshape(len(x), -1))
        q = self.fc2.forward(h)
        self._last_batch = (len(x), single)
        return q[0] if single else q

    __call__ = forward

    def backward(self, action_index, td_error) -> dict[str, np.ndarray]:
        """Gradients of the mean of ``0.5 * (target - Q(s, a))**2`` over the last forward batch.

        ``td_error`` is ``target - Q(s, a)``; only the chosen action's output
        receives gradient.
        """
        if self._last_batch is None:
            raise BackwardStateError("backward called without a preceding forward pass")
        n, _ = self._last_batch
        actions = np.atleast_1d(np.asarray(action_index, dtype=np.int64))
        td = np.atleast_1d(np.asarray(td_error, dtype=np.float64))
        if actions.shape != (n,) or td.shape != (n,):
            raise ShapeError(f"need {n} actions and td errors for the last forward batch")
        dq = np.zeros((n, self.n_actions))
        dq[np.arange(n), actions] = -td / n
        grads = {}
        dh, g = self.fc2.backward(dq)
        grads.update({f"fc2.{k}": v for k, v in g.items()})
        dh, g = self.fc1.backward(dh)
        grads.update({f"fc1.{k}": v for k, v in g.items()})
        dh = dh.reshape(self._conv_out_shape)
        for i in range(len(self.convs) - 1, -1, -1):
            dh, g = self.convs[i].backward(dh, need_dx=i > 0)  # nothing consumes the input gradient
            grads.update({f"conv{i + 1}.{k}": v for k, v in g.items()})
        self._last_batch = None
        return grads

    def copy(self) -> "QNetwork":
        clone = copy.copy(self)
        clone.convs = [copy.deepcopy(c) for c in self.convs]
        clone.fc1 = copy.deepcopy(self.fc1)
        clone.fc2 = copy.deepcopy(self.fc2)
        for layer in clone.layers:
            layer._cache = None
        clone._last_batch = None
        return clone

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.params()
        if own.keys() != params.keys():
            raise ShapeError("parameter names do not match this network")
        for k, v in params.items():
            if own[k].shape != np.shape(v):
                raise ShapeError(f"{k}: shape {np.shape(v)} != {own[k].shape}")
            own[k][...] = v

    def architecture(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "n_actions": self.n_actions,
            "conv_layers": [str(c) for c in self.conv_specs],
            "fc_units": self.fc_units,
            "output_activation": self.output_activation,
            "seed": self.seed,
        }

    @classmethod
    def from_architecture(cls, arch: dict) -> "QNetwork":
        return cls(
            input_shape=arch["input_shape"],
            n_actions=arch["n_actions"],
            conv_layers=arch["conv_layers"],
            fc_units=arch["fc_units"],
            output_activation=arch["output_activation"],
            seed=arch.get("seed"),
        )


def sync_target(online: QNetwork, target: QNetwork | None = None) -> QNetwork:
    """Copy online parameters into ``target`` (or a fresh copy) and return it."""
    if target is None:
        return online.copy()
    target.load_params(online.params())
    return target


class SGD:
    def __init__(self, learning_rate: float = 0.01):
        self.learning_rate = learning_rate

    def step(self, params: dict, grads: dict) -> None:
        _check_finite(grads)
        for k, p in params.items():
            p -= self.learning_rate * grads[k]

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class RMSProp:
    """``p -= lr * g / sqrt(E[g^2] + eps)`` with eps inside the root, DQN style.

    With ``centered=True`` the running mean of g is subtracted from E[g^2].
    """

    def __init__(self, learning_rate: float = 0.00025, decay: float = 0.95, eps: float = 0.01, centered: bool = False):
        self.learning_rate = learning_rate
        self.decay = decay
        self.eps = eps
        self.centered = centered
        self.sq: dict[str, np.ndarray] = {}
        self.mean: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        _check_finite(grads)
        rho = self.decay
        for k, p in params.items():
            g = grads[k]
            sq = self.sq.setdefault(k, np.zeros_like(p))
            sq *= rho
            sq += (1 - rho) * g * g
            denom = sq
            if self.centered:
                mg = self.mean.setdefault(k, np.zeros_like(p))
                mg *= rho
                mg += (1 - rho) * g
                denom = sq - mg * mg
            p -= self.learning_rate * g / np.sqrt(denom + self.eps)

    def state_dict(self) -> dict:
        state = {f"sq/{k}": v for k, v in self.sq.items()}
        state.update({f"mean/{k}": v for k, v in self.mean.items()})
        return state

    def load_state_dict(self, state: dict) -> None:
        self.sq = {k[3:]: np.array(v) for k, v in state.items() if k.startswith("sq/")}
        self.mean = {k[5:]: np.array(v) for k, v in state.items() if k.startswith("mean/")}


def _check_finite(grads: dict) -> None:
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {k}")


def make_optimizer(name: str, learning_rate: float, decay: float = 0.95, eps: float = 0.01):
    if name == "rmsprop":
        return RMSProp(learning_rate, decay, eps)
    if name == "sgd":
        return SGD(learning_rate)
    raise ValueError(f"unknown optimizer {name!r}")


def save_checkpoint(path, net: QNetwork, optimizer=None, meta: dict | None = None) -> Path:
    """Write parameters, optimizer state and JSON metadata to an ``.npz`` container."""
    path = Path(path)
    header = {
        "format": "dqn_trader.checkpoint",
        "version": CHECKPOINT_VERSION,
        "architecture": net.architecture(),
        "optimizer": type(optimizer).__name__ if optimizer is not None else None,
        "meta": meta or {},
    }
    arrays = {f"param/{k}": v for k, v in net.params().items()}
    if optimizer is not None:
        arrays.update({f"opt/{k}": v for k, v in optimizer.state_dict().items()})
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path, optimizer=None) -> tuple[QNetwork, dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != "dqn_trader.checkpoint":
            raise ValueError(f"{path} is not a dqn_trader checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {header['version']} is newer than supported")
        net = QNetwork.from_architecture(header["architecture"])
        net.load_params({k[6:]: data[k] for k in data.files if k.startswith("param/")})
        if optimizer is not None:
            optimizer.load_state_dict({k[4:]: data[k] for k in data.files if k.startswith("opt/")})
    return net, header
