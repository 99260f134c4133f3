"""Small dense-network toolkit in numpy: MLPs, Adam, polyak averaging and
the tanh-squashed Gaussian policy head.

Everything is float64 and deterministic given explicit noise.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

CHECKPOINT_MAGIC = b"SACR2CKPT"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class MlpParams:
    """Dense network parameters held in one flat float64 buffer.

    ``weights[i]`` is (fan_in, fan_out) and ``biases[i]`` is (fan_out,); both
    are views into ``flat`` so optimizers and averaging act on one array.
    Hidden layers share one activation; the output layer is linear.
    """

    def __init__(self, weights, biases, activation="relu"):
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        if len(weights) != len(biases):
            raise ShapeError("weights and biases differ in length")
        shapes = []
        for i, (w, b) in enumerate(zip(weights, biases)):
            w = np.asarray(w)
            b = np.asarray(b)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and shapes[-1][0][1] != w.shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[0]} != previous output")
            shapes.append((w.shape, b.shape))
        self.activation = activation
        self._bind(np.empty(sum(int(np.prod(ws)) + bs[0] for ws, bs in shapes)), shapes)
        for dst, src in zip(self.tensors(), [t for wb in zip(weights, biases) for t in wb]):
            dst[...] = src

    def _bind(self, flat, shapes):
        self.flat = flat
        self.weights, self.biases = [], []
        off = 0
        for ws, bs in shapes:
            n = ws[0] * ws[1]
            self.weights.append(flat[off : off + n].reshape(ws))
            off += n
            self.biases.append(flat[off : off + bs[0]])
            off += bs[0]

    @property
    def shapes(self):
        return [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def _like(self, flat) -> "MlpParams":
        new = object.__new__(MlpParams)
        new.activation = self.activation
        new._bind(flat, self.shapes)
        return new

    def copy(self) -> "MlpParams":
        return self._like(self.flat.copy())

    def zeros_like(self) -> "MlpParams":
        return self._like(np.zeros_like(self.flat))

    def __eq__(self, other):
        return (
            isinstance(other, MlpParams)
            and self.activation == other.activation
            and self.shapes == other.shapes
            and np.array_equal(self.flat, other.flat)
        )

    def __repr__(self):
        return f"MlpParams(sizes={self.sizes}, activation={self.activation!r})"


def init_mlp(sizes, rng: np.random.Generator, activation="relu") -> MlpParams:
    """Uniform(+-1/sqrt(fan_in)) init for weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases, activation)


def forward(params: MlpParams, x):
    """Returns ``(output, cache)``; the cache holds each layer's input and
    each hidden layer's post-activation value."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ShapeError(f"input shape {x.shape}, network expects (*, {params.weights[0].shape[0]})")
    inputs = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0) if params.activation == "relu" else np.tanh(h)
    return h, inputs


def backward(params: MlpParams, cache, dout, param_grads=True):
    """Reverse pass. Returns ``(grads, dinput)``; ``grads`` is an MlpParams,
    or None when ``param_grads`` is false (input gradient only)."""
    inputs = cache
    g = np.asarray(dout, dtype=np.float64)
    grads = params.zeros_like() if param_grads else None
    for i in range(len(params.weights) - 1, -1, -1):
        if param_grads:
            np.matmul(inputs[i].T, g, out=grads.weights[i])
            np.sum(g, axis=0, out=grads.biases[i])
        if i == 0:
            g = g @ params.weights[0].T
            break
        g = g @ params.weights[i].T
        act = inputs[i]
        if params.activation == "relu":
            g *= act > 0
        else:
            g *= 1.0 - act * act
    return grads, g


def l2_norm_sq(params: MlpParams) -> float:
    """Squared norm of the weight matrices (biases excluded)."""
    return float(sum(np.vdot(w, w) for w in params.weights))


def add_l2_grad(grads: MlpParams, params: MlpParams, coef: float) -> None:
    if coef:
        for g, w in zip(grads.weights, params.weights):
            g += 2.0 * coef * w


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), lr, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.lr, self.beta1, self.beta2, self.eps, self.t)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState):
    """Bias-corrected Adam. Mutates and returns ``(params, state)``."""
    if params.flat.shape != grads.flat.shape:
        raise ShapeError(f"grad size {grads.flat.shape} != param size {params.flat.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr * math.sqrt(1.0 - b2**state.t) / (1.0 - b1**state.t)
    g, m, v = grads.flat, state.m.flat, state.v.flat
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    # same as m_hat / (sqrt(v_hat) + eps)
    denom = np.sqrt(v)
    denom += state.eps * math.sqrt(1.0 - b2**state.t)
    params.flat -= step * m / denom
    return params, state


def polyak_update(target: MlpParams, source: MlpParams, tau: float) -> MlpParams:
    """In place: target <- tau * source + (1 - tau) * target."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if target.shapes != source.shapes:
        raise ShapeError(f"polyak shapes differ: {target.shapes} vs {source.shapes}")
    if tau == 1.0:
        target.flat[...] = source.flat
    elif tau:
        target.flat *= 1.0 - tau
        target.flat += tau * source.flat
    return target


@dataclass
class PolicyHeadOutput:
    mean: np.ndarray
    log_std: np.ndarray
    pre_squash: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray
    noise: np.ndarray
    # bookkeeping for policy_backward
    cache: list = field(repr=False, default=None)
    log_std_raw: np.ndarray = field(repr=False, default=None)

    @property
    def deterministic_action(self) -> np.ndarray:
        return np.tanh(self.mean)


def policy_sample(params: MlpParams, obs, noise) -> PolicyHeadOutput:
    """Reparameterized sample. The network emits [mean, log_std] per action dim."""
    out, cache = forward(params, obs)
    act_dim = out.shape[1] // 2
    mean = out[:, :act_dim]
    log_std_raw = out[:, act_dim:]
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    noise = np.asarray(noise, dtype=np.float64)
    u = mean + np.exp(log_std) * noise
    a = np.tanh(u)
    gauss = -0.5 * noise**2 - log_std - HALF_LOG_2PI
    log_prob = gauss.sum(axis=1) - np.log(1.0 - a * a + SQUASH_EPS).sum(axis=1)
    return PolicyHeadOutput(mean, log_std, u, a, log_prob, noise, cache, log_std_raw)


def policy_backward(params: MlpParams, head: PolicyHeadOutput, d_action=None, d_log_prob=None, d_mean=None):
    """Backprop through the policy head.

    ``d_action`` (B, A) and ``d_log_prob`` (B,) are gradients w.r.t. the sampled
    action and its log-probability; ``d_mean`` (B, A) is an extra gradient on
    the pre-tanh mean (used by the behaviour-cloning term).
    """
    a = head.action
    one_minus = 1.0 - a * a
    sigma_eps = np.exp(head.log_std) * head.noise
    d_u = np.zeros_like(a)
    d_ls = np.zeros_like(a)
    if d_action is not None:
        d_u += d_action * one_minus
    if d_log_prob is not None:
        dlp = np.asarray(d_log_prob)[:, None]
        # d/du of -log(1 - tanh(u)^2 + eps)
        d_u += dlp * (2.0 * a * one_minus / (one_minus + SQUASH_EPS))
        d_ls += -dlp
    d_mu = d_u.copy()
    d_ls += d_u * sigma_eps
    if d_mean is not None:
        d_mu += d_mean
    inside = (head.log_std_raw > LOG_STD_MIN) & (head.log_std_raw < LOG_STD_MAX)
    d_ls = d_ls * inside
    grads, _ = backward(params, head.cache, np.concatenate([d_mu, d_ls], axis=1))
    return grads


def gaussian_entropy(log_std) -> np.ndarray:
    """Differential entropy of a diagonal Gaussian, summed over the last axis."""
    log_std = np.asarray(log_std, dtype=np.float64)
    return (log_std + 0.5 * math.log(2.0 * math.pi * math.e)).sum(axis=-1)


def save_checkpoint(path, named_params: dict) -> None:
    """Flat float64 dump with a JSON shape manifest; round-trip exact."""
    manifest = {"version": CHECKPOINT_VERSION, "nets": {}}
    blobs = []
    for name, p in named_params.items():
        manifest["nets"][name] = {"activation": p.activation, "shapes": [list(t.shape) for t in p.tensors()]}
        blobs += [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in p.tensors()]
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n" + header + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.readline().rstrip(b"\n") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    manifest = json.loads(buf.readline())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {manifest.get('version')}, expected {CHECKPOINT_VERSION}")
    out = {}
    for name, spec in manifest["nets"].items():
        tensors = []
        for shape in spec["shapes"]:
            n = int(np.prod(shape)) * 8
            raw = buf.read(n)
            if len(raw) != n:
                raise ValueError(f"{path}: truncated checkpoint")
            tensors.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        out[name] = MlpParams(tensors[0::2], tensors[1::2], spec["activation"])
    if buf.read(1):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return out
