"""Feed-forward network with a hand-rolled differentiation core.

The network is a tanh MLP: z_0 is the assembled input [t, x0, u], hidden
layers z_k = tanh(W_k z_{k-1} + b_k), and an affine output layer.  Three
derivative paths are implemented directly on the layer recurrence:

  * grad_params        -- reverse accumulation of <upstream, forward(z0)>
  * jvp_input          -- forward accumulation along an input direction
                          (used for the time derivative of the prediction)
  * grad_params_of_jvp -- reverse accumulation through the tangent
                          recurrence, i.e. parameter gradients of
                          <upstream, jvp_input(z0, v)>

All functions take batched inputs of shape (batch, n) and return
batch-summed parameter gradients, which is what full-batch training needs.
The identity activation exists only so tests can compare against closed
forms; real models always use tanh.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

MAGIC = b"SWNN"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Corrupted or foreign model file."""


class ModelVersionError(ValueError):
    """Model file written by an incompatible format version."""


@dataclass(frozen=True)
class MLPParams:
    layer_dims: tuple            # (n_in, N_1, ..., N_K, n_out)
    weights: tuple               # W_k with shape (dims[k+1], dims[k])
    biases: tuple                # b_k with shape (dims[k+1],)
    activation: str = "tanh"     # 'identity' is for tests only

    def __post_init__(self):
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        dims = self.layer_dims
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[k + 1], dims[k]) or b.shape != (dims[k + 1],):
                raise ValueError(f"layer {k} shape mismatch")

    @property
    def n_in(self):
        return self.layer_dims[0]

    @property
    def n_out(self):
        return self.layer_dims[-1]

    @property
    def n_hidden_layers(self):
        return len(self.layer_dims) - 2

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))


def init_glorot(layer_dims, seed):
    """Uniform Glorot weights on +-sqrt(6/(fan_in+fan_out)); zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("layer_dims needs at least (n_in, n_out), all >= 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(dims, tuple(weights), tuple(biases))


def _act(params, a):
    return np.tanh(a) if params.activation == "tanh" else a


def _act_slope(params, z):
    # activation derivative expressed through the activation output
    return 1.0 - z * z if params.activation == "tanh" else np.ones_like(z)


def _act_slope_dz(params, z):
    return -2.0 * z if params.activation == "tanh" else np.zeros_like(z)


def _forward_cache(params, z0):
    """Returns (output, activations) with activations[0] = z0."""
    z = np.asarray(z0, float)
    if z.ndim != 2 or z.shape[1] != params.n_in:
        raise ValueError(f"input must have shape (batch, {params.n_in})")
    zs = [z]
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = _act(params, z @ W.T + b)
        zs.append(z)
    y = z @ params.weights[-1].T + params.biases[-1]
    return y, zs


def _slope_cache(params, zs):
    """Activation slopes per hidden layer, computed once and shared."""
    return [_act_slope(params, z) for z in zs[1:]]


def forward(params, z0):
    """Network output for a (batch, n_in) input."""
    return _forward_cache(params, z0)[0]


def _grad_params_cached(params, zs, upstream, hs=None):
    if hs is None:
        hs = _slope_cache(params, zs)
    gW = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    r = upstream
    gW[-1] = r.T @ zs[-1]
    gb[-1] = r.sum(axis=0)
    r = r @ params.weights[-1]
    for k in range(params.n_hidden_layers, 0, -1):
        p = r * hs[k - 1]
        gW[k - 1] = p.T @ zs[k - 1]
        gb[k - 1] = p.sum(axis=0)
        if k > 1:
            r = p @ params.weights[k - 1]
    return tuple(gW), tuple(gb)


def grad_params(params, z0, upstream):
    """Batch-summed parameter gradients of <upstream, forward(z0)>.

    Returns (weight_grads, bias_grads) as tuples matching params.
    """
    upstream = np.asarray(upstream, float)
    y, zs = _forward_cache(params, z0)
    if upstream.shape != y.shape:
        raise ValueError(f"upstream shape {upstream.shape} != output {y.shape}")
    return _grad_params_cached(params, zs, upstream)


def _tangent_cache(params, zs, v, hs=None):
    """Forward (tangent) pass along input direction v.

    Returns (ydot, zdots, pre_tangents) where pre_tangents[k] = W_k zdot_{k-1}
    before the activation slope is applied.
    """
    if hs is None:
        hs = _slope_cache(params, zs)
    zdot = np.asarray(v, float)
    if zdot.shape != zs[0].shape:
        raise ValueError("tangent direction must match the input batch shape")
    zdots = [zdot]
    pres = []
    for k, W in enumerate(params.weights[:-1], start=1):
        pre = zdot @ W.T
        zdot = hs[k - 1] * pre
        pres.append(pre)
        zdots.append(zdot)
    ydot = zdot @ params.weights[-1].T
    return ydot, zdots, pres


def jvp_input(params, z0, v):
    """Directional derivative of forward(z0) along input tangent v."""
    _, zs = _forward_cache(params, z0)
    return _tangent_cache(params, zs, v)[0]


def dxdt_forward(params, z0, t_index=0, t_chain=1.0):
    """d forward / d t where the t input sits at column t_index.

    t_chain rescales from the normalized input to physical seconds (the
    derivative of normalized t with respect to physical t).
    """
    z0 = np.asarray(z0, float)
    v = np.zeros_like(z0)
    v[:, t_index] = t_chain
    return jvp_input(params, z0, v)


def grad_params_of_jvp(params, z0, v, upstream):
    """Batch-summed parameter gradients of <upstream, jvp_input(z0, v)>.

    Reverse accumulation through the joint primal/tangent recurrence
    (forward-over-reverse composition).
    """
    upstream = np.asarray(upstream, float)
    _, zs = _forward_cache(params, z0)
    ydot, zdots, pres = _tangent_cache(params, zs, v)
    if upstream.shape != ydot.shape:
        raise ValueError("upstream shape mismatch")
    return _grad_jvp_cached(params, zs, zdots, pres, upstream)


def _grad_jvp_cached(params, zs, zdots, pres, upstream, hs=None):
    if hs is None:
        hs = _slope_cache(params, zs)
    gW = [np.zeros_like(W) for W in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    # output layer: ydot = W_last zdot_K  (bias does not enter the tangent)
    gW[-1] += upstream.T @ zdots[-1]
    s = upstream @ params.weights[-1]      # adjoint on zdot_K
    r = np.zeros_like(s)                   # adjoint on z_K
    for k in range(params.n_hidden_layers, 0, -1):
        h = hs[k - 1]
        r = r + s * _act_slope_dz(params, zs[k]) * pres[k - 1]
        q = s * h                          # adjoint on the pre-tangent W_k zdot_{k-1}
        gW[k - 1] += q.T @ zdots[k - 1]
        p = r * h                          # adjoint on the pre-activation
        gW[k - 1] += p.T @ zs[k - 1]
        gb[k - 1] += p.sum(axis=0)
        if k > 1:
            s = q @ params.weights[k - 1]
            r = p @ params.weights[k - 1]
    return tuple(gW), tuple(gb)


# ---------------------------------------------------------------------------
# Flat parameter vector helpers (for the optimizer)
# ---------------------------------------------------------------------------

def flatten_params(params):
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten_params(params, theta):
    theta = np.asarray(theta, float)
    if theta.size != params.n_params:
        raise ValueError(f"expected {params.n_params} values, got {theta.size}")
    weights, biases = [], []
    pos = 0
    for W, b in zip(params.weights, params.biases):
        weights.append(theta[pos : pos + W.size].reshape(W.shape))
        pos += W.size
        biases.append(theta[pos : pos + b.size])
        pos += b.size
    return replace(params, weights=tuple(weights), biases=tuple(biases))


def flatten_grads(grads):
    gW, gb = grads
    parts = []
    for W, b in zip(gW, gb):
        parts.append(np.asarray(W).ravel())
        parts.append(np.asarray(b).ravel())
    return np.concatenate(parts)


def add_grads(a, b, scale=1.0):
    """a + scale * b for (weight_grads, bias_grads) tuples."""
    gW = tuple(x + scale * y for x, y in zip(a[0], b[0]))
    gb = tuple(x + scale * y for x, y in zip(a[1], b[1]))
    return gW, gb


# ---------------------------------------------------------------------------
# Normalization and the bound surrogate model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normalization:
    """Affine input/output maps recorded with every model.

    normalized input  = (physical - in_shift) / in_scale
    physical output   = out_shift + out_scale * network output
    """

    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: np.ndarray
    out_scale: np.ndarray

    def __post_init__(self):
        for arr in (self.in_shift, self.in_scale, self.out_shift, self.out_scale):
            arr.setflags(write=False)
        if np.any(self.in_scale == 0) or np.any(self.out_scale == 0):
            raise ValueError("normalization scales must be nonzero (bijective map)")

    def normalize_in(self, u):
        return (np.asarray(u, float) - self.in_shift) / self.in_scale

    def denormalize_out(self, y):
        return self.out_shift + self.out_scale * y


@dataclass
class SurrogateModel:
    """MLP parameters plus normalization and provenance metadata."""

    params: MLPParams
    norm: Normalization
    meta: dict = field(default_factory=dict)

    def predict(self, inputs):
        """Physical inputs (batch, n_in) -> physical states (batch, n_out)."""
        z0 = self.norm.normalize_in(np.atleast_2d(inputs))
        return self.norm.denormalize_out(forward(self.params, z0))

    def predict_with_dt(self, inputs, t_index=0):
        """Predicted states and their physical time derivatives."""
        z0 = self.norm.normalize_in(np.atleast_2d(inputs))
        y, zs = _forward_cache(self.params, z0)
        v = np.zeros_like(z0)
        v[:, t_index] = 1.0 / self.norm.in_scale[t_index]
        ydot = _tangent_cache(self.params, zs, v)[0]
        return self.norm.denormalize_out(y), self.norm.out_scale * ydot


# ---------------------------------------------------------------------------
# Model file (binary container, versioned)
# ---------------------------------------------------------------------------

def save_model(model, path):
    """Bit-exact container: header, dims, payload, normalization, JSON meta."""
    params, norm = model.params, model.norm
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    act_tag = b"T" if params.activation == "tanh" else b"I"
    buf.write(act_tag)
    dims = params.layer_dims
    buf.write(struct.pack("<I", len(dims)))
    buf.write(struct.pack(f"<{len(dims)}I", *dims))
    for W, b in zip(params.weights, params.biases):
        buf.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    for arr in (norm.in_shift, norm.in_scale, norm.out_shift, norm.out_scale):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta_blob = json.dumps(model.meta, sort_keys=True).encode()
    buf.write(struct.pack("<Q", len(meta_blob)))
    buf.write(meta_blob)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic header)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}"
        )
    act = {b"T": "tanh", b"I": "identity"}.get(buf.read(1))
    if act is None:
        raise ModelFormatError(f"{path}: unknown activation tag")
    (ndims,) = struct.unpack("<I", buf.read(4))
    dims = struct.unpack(f"<{ndims}I", buf.read(4 * ndims))

    def read_arr(shape):
        count = int(np.prod(shape))
        raw = buf.read(8 * count)
        if len(raw) != 8 * count:
            raise ModelFormatError(f"{path}: truncated payload")
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(read_arr((fan_out, fan_in)))
        biases.append(read_arr((fan_out,)))
    params = MLPParams(tuple(dims), tuple(weights), tuple(biases), activation=act)
    norm = Normalization(
        in_shift=read_arr((dims[0],)),
        in_scale=read_arr((dims[0],)),
        out_shift=read_arr((dims[-1],)),
        out_scale=read_arr((dims[-1],)),
    )
    (meta_len,) = struct.unpack("<Q", buf.read(8))
    meta = json.loads(buf.read(meta_len).decode()) if meta_len else {}
    return SurrogateModel(params=params, norm=norm, meta=meta)
