"""Dense-tensor message-passing stack with analytic gradients.

GCN, GAT, GIN and nodewise linear layers, global pooling, a shared MLP
trunk with separate translation/quaternion heads, a bias-corrected Adam
optimizer, plain-text checkpoints, and a finite-difference gradient
checker.

Graph structure (adjacency, attention topology, degrees) is constant
under differentiation; only feature and parameter paths carry gradients.
A model instance is single-writer: forward, backward and updates must be
externally serialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    EmptyGraphError,
    FormatError,
    InvalidInputError,
    SchemaVersionError,
    ShapeError,
    StateError,
)

LAYER_KINDS = ("gcn", "gat", "gin", "linear")
ACTIVATIONS = ("relu", "tanh", "none")
POOLINGS = ("mean", "sum")
PRESET_NAMES = ("GAT+2GCN", "3GCN+GAT", "GIN_SumPool")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    heads: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidInputError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1 or self.heads < 1:
            raise InvalidInputError("layer dimensions and heads must be >= 1")
        if self.kind == "gat" and self.out_dim % self.heads != 0:
            raise InvalidInputError("GAT out_dim must be divisible by heads")


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple[LayerSpec, ...]
    pooling: str = "mean"
    hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.pooling not in POOLINGS:
            raise InvalidInputError(f"unknown pooling {self.pooling!r}")
        if self.hidden < 1:
            raise InvalidInputError("hidden width must be >= 1")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    def trunk_in_dim(self, feature_dim: int = 6) -> int:
        return self.layers[-1].out_dim if self.layers else feature_dim


def preset_config(name: str, hidden: int = 64, feature_dim: int = 6) -> ModelConfig:
    """Named stacks from the experiment tables; layer order follows the name."""
    if name == "GAT+2GCN":
        layers = (LayerSpec("gat", feature_dim, hidden, heads=4),
                  LayerSpec("gcn", hidden, hidden),
                  LayerSpec("gcn", hidden, hidden))
        return ModelConfig(layers, pooling="mean", hidden=hidden)
    if name == "3GCN+GAT":
        layers = (LayerSpec("gcn", feature_dim, hidden),
                  LayerSpec("gcn", hidden, hidden),
                  LayerSpec("gcn", hidden, hidden),
                  LayerSpec("gat", hidden, hidden, heads=4))
        return ModelConfig(layers, pooling="mean", hidden=hidden)
    if name == "GIN_SumPool":
        layers = (LayerSpec("gin", feature_dim, hidden),
                  LayerSpec("gin", hidden, hidden))
        return ModelConfig(layers, pooling="sum", hidden=hidden)
    raise InvalidInputError(f"unknown preset {name!r}")


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

class ModelParams:
    """Named tensors with paired gradient and Adam moment buffers."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = {k: np.asarray(v, dtype=float) for k, v in tensors.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        self.m = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        self.step = 0

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def set_grads(self, grads: dict[str, np.ndarray]) -> None:
        for k in self.tensors:
            self.grads[k][...] = grads[k]

    def copy(self) -> "ModelParams":
        out = ModelParams({k: v.copy() for k, v in self.tensors.items()})
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        out.step = self.step
        return out


def _glorot(rng, fan_in, fan_out, shape):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(config: ModelConfig, seed=0, feature_dim: int = 6) -> ModelParams:
    """Uniform Glorot weights, zero biases, zero GIN epsilon."""
    rng = np.random.default_rng(seed)
    t: dict[str, np.ndarray] = {}
    for i, spec in enumerate(config.layers):
        p = f"L{i}"
        if spec.kind in ("gcn", "linear"):
            t[f"{p}.W"] = _glorot(rng, spec.in_dim, spec.out_dim,
                                  (spec.in_dim, spec.out_dim))
            t[f"{p}.b"] = np.zeros(spec.out_dim)
        elif spec.kind == "gat":
            dh = spec.out_dim // spec.heads
            t[f"{p}.W"] = _glorot(rng, spec.in_dim, dh,
                                  (spec.heads, spec.in_dim, dh))
            t[f"{p}.a_src"] = _glorot(rng, 2 * dh, 1, (spec.heads, dh))
            t[f"{p}.a_dst"] = _glorot(rng, 2 * dh, 1, (spec.heads, dh))
            t[f"{p}.b"] = np.zeros(spec.out_dim)
        elif spec.kind == "gin":
            t[f"{p}.eps"] = np.zeros(())
            t[f"{p}.W1"] = _glorot(rng, spec.in_dim, spec.out_dim,
                                   (spec.in_dim, spec.out_dim))
            t[f"{p}.b1"] = np.zeros(spec.out_dim)
            t[f"{p}.W2"] = _glorot(rng, spec.out_dim, spec.out_dim,
                                   (spec.out_dim, spec.out_dim))
            t[f"{p}.b2"] = np.zeros(spec.out_dim)
    trunk_in = config.trunk_in_dim(feature_dim)
    t["mlp1.W"] = _glorot(rng, trunk_in, config.hidden, (trunk_in, config.hidden))
    t["mlp1.b"] = np.zeros(config.hidden)
    t["head_t.W"] = _glorot(rng, config.hidden, 4, (config.hidden, 4))
    t["head_t.b"] = np.zeros(4)
    t["head_q.W"] = _glorot(rng, config.hidden, 4, (config.hidden, 4))
    t["head_q.b"] = np.zeros(4)
    return ModelParams(t)


# ---------------------------------------------------------------------------
# Graph tensors
# ---------------------------------------------------------------------------

class GraphTensors:
    """Dense constants derived from a graph: features, weighted adjacency,
    GCN-normalized operator, and the GAT attention mask (with self-loops)."""

    def __init__(self, features: np.ndarray, adj: np.ndarray):
        self.x = np.asarray(features, dtype=float)
        self.n = len(self.x)
        self.adj = np.asarray(adj, dtype=float)
        a_tilde = self.adj + np.eye(self.n)
        d = a_tilde.sum(axis=1)
        dinv = 1.0 / np.sqrt(d)
        self.a_hat = a_tilde * dinv[:, None] * dinv[None, :]
        self.mask = (self.adj > 0) | np.eye(self.n, dtype=bool)


def graph_tensors(g, symmetrize: bool | None = None) -> GraphTensors:
    """Build dense operators from an EpipolarGraph."""
    if g.n_nodes == 0:
        raise EmptyGraphError("graph has no nodes")
    if symmetrize is None:
        symmetrize = bool(g.meta.get("symmetrize", True))
    A = np.zeros((g.n_nodes, g.n_nodes))
    src, dst, w = g.edge_arrays()
    A[src, dst] = w
    if symmetrize:
        A = np.maximum(A, A.T)
    return GraphTensors(g.node_features, A)


# ---------------------------------------------------------------------------
# Activations / small math
# ---------------------------------------------------------------------------

def _act(P, kind):
    if kind == "relu":
        return np.maximum(P, 0.0)
    if kind == "tanh":
        return np.tanh(P)
    return P


def _act_back(dY, P, Y, kind):
    if kind == "relu":
        return dY * (P > 0)
    if kind == "tanh":
        return dY * (1.0 - Y * Y)
    return dY


def _softplus(x: float) -> float:
    return float(np.maximum(x, 0.0) + np.log1p(np.exp(-abs(x))))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return float(1.0 / (1.0 + np.exp(-x)))
    e = np.exp(x)
    return float(e / (1.0 + e))


_LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# Layer forward/backward
# ---------------------------------------------------------------------------

def _check_shape(H, spec: LayerSpec):
    if H.ndim != 2 or H.shape[1] != spec.in_dim:
        raise ShapeError(f"{spec.kind} layer expects (N, {spec.in_dim}), got {H.shape}")


def gcn_forward(H, gt: GraphTensors, W, b, activation="none"):
    """H' = act(A_hat @ H @ W + b) with A_hat = D^-1/2 (A + I) D^-1/2."""
    AH = gt.a_hat @ H
    P = AH @ W + b
    Y = _act(P, activation)
    return Y, {"H": H, "AH": AH, "P": P, "Y": Y, "W": W, "act": activation}


def gcn_backward(dY, cache, gt: GraphTensors):
    dP = _act_back(dY, cache["P"], cache["Y"], cache["act"])
    dW = cache["AH"].T @ dP
    db = dP.sum(axis=0)
    dH = gt.a_hat.T @ (dP @ cache["W"].T)
    return dH, {"W": dW, "b": db}


def gat_forward(H, gt: GraphTensors, W, a_src, a_dst, b, activation="none"):
    """Multi-head attention over each node's neighborhood plus itself.

    Per head: logits leaky_relu(a_src . z_i + a_dst . z_j) softmaxed over
    j in N(i) u {i}; heads are concatenated, then bias and activation.
    """
    heads, _, dh = W.shape
    n = H.shape[0]
    Z = np.einsum("nf,hfd->hnd", H, W)          # (heads, n, dh)
    s1 = np.einsum("hnd,hd->hn", Z, a_src)      # attending node
    s2 = np.einsum("hnd,hd->hn", Z, a_dst)      # attended neighbor
    raw = s1[:, :, None] + s2[:, None, :]       # (heads, n, n); rows attend cols
    lrel = np.where(raw > 0, raw, _LEAKY_SLOPE * raw)
    logits = np.where(gt.mask[None, :, :], lrel, -np.inf)
    mx = logits.max(axis=2, keepdims=True)
    e = np.exp(logits - mx)
    alpha = e / e.sum(axis=2, keepdims=True)    # (heads, n, n)
    out = np.einsum("hij,hjd->hid", alpha, Z)   # (heads, n, dh)
    P = out.transpose(1, 0, 2).reshape(n, heads * dh) + b
    Y = _act(P, activation)
    return Y, {"H": H, "Z": Z, "raw": raw, "alpha": alpha, "P": P, "Y": Y,
               "W": W, "a_src": a_src, "a_dst": a_dst, "act": activation}


def gat_backward(dY, cache, gt: GraphTensors):
    H, Z, raw, alpha = cache["H"], cache["Z"], cache["raw"], cache["alpha"]
    W, a_src, a_dst = cache["W"], cache["a_src"], cache["a_dst"]
    heads, n, dh = Z.shape
    dP = _act_back(dY, cache["P"], cache["Y"], cache["act"])
    db = dP.sum(axis=0)
    G = dP.reshape(n, heads, dh).transpose(1, 0, 2)      # (heads, n, dh)

    dalpha = np.einsum("hid,hjd->hij", G, Z)
    dZ = np.einsum("hij,hid->hjd", alpha, G)             # value path
    # softmax rows: alpha * (dalpha - sum_j alpha dalpha)
    inner = (alpha * dalpha).sum(axis=2, keepdims=True)
    dlrel = alpha * (dalpha - inner)
    draw = dlrel * np.where(raw > 0, 1.0, _LEAKY_SLOPE)
    ds1 = draw.sum(axis=2)                               # (heads, n)
    ds2 = draw.sum(axis=1)
    da_src = np.einsum("hn,hnd->hd", ds1, Z)
    da_dst = np.einsum("hn,hnd->hd", ds2, Z)
    dZ += ds1[:, :, None] * a_src[:, None, :]
    dZ += ds2[:, :, None] * a_dst[:, None, :]
    dW = np.einsum("nf,hnd->hfd", H, dZ)
    dH = np.einsum("hnd,hfd->nf", dZ, W)
    return dH, {"W": dW, "a_src": da_src, "a_dst": da_dst, "b": db}


def gin_forward(H, gt: GraphTensors, eps, W1, b1, W2, b2, activation="none"):
    """H' = act(MLP((1 + eps) H_i + sum_j A_ij H_j)); 2-layer relu MLP."""
    S = (1.0 + eps) * H + gt.adj @ H
    U1 = S @ W1 + b1
    A1 = np.maximum(U1, 0.0)
    P = A1 @ W2 + b2
    Y = _act(P, activation)
    return Y, {"H": H, "S": S, "U1": U1, "A1": A1, "P": P, "Y": Y,
               "eps": eps, "W1": W1, "W2": W2, "act": activation}


def gin_backward(dY, cache, gt: GraphTensors):
    dP = _act_back(dY, cache["P"], cache["Y"], cache["act"])
    dW2 = cache["A1"].T @ dP
    db2 = dP.sum(axis=0)
    dA1 = dP @ cache["W2"].T
    dU1 = dA1 * (cache["U1"] > 0)
    dW1 = cache["S"].T @ dU1
    db1 = dU1.sum(axis=0)
    dS = dU1 @ cache["W1"].T
    deps = np.asarray((dS * cache["H"]).sum())
    dH = (1.0 + cache["eps"]) * dS + gt.adj.T @ dS
    return dH, {"eps": deps, "W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def linear_forward(H, W, b, activation="none"):
    P = H @ W + b
    Y = _act(P, activation)
    return Y, {"H": H, "P": P, "Y": Y, "W": W, "act": activation}


def linear_backward(dY, cache):
    dP = _act_back(dY, cache["P"], cache["Y"], cache["act"])
    return dP @ cache["W"].T, {"W": cache["H"].T @ dP, "b": dP.sum(axis=0)}


def pool(H, mode: str) -> np.ndarray:
    """Columnwise mean or sum over nodes."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] == 0:
        raise EmptyGraphError("cannot pool an empty node set")
    if mode == "mean":
        return H.mean(axis=0)
    if mode == "sum":
        return H.sum(axis=0)
    raise InvalidInputError(f"unknown pooling {mode!r}")


def _pool_backward(dz, n, mode):
    if mode == "mean":
        return np.tile(dz / n, (n, 1))
    return np.tile(dz, (n, 1))


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------

class ModelOutput(NamedTuple):
    q: np.ndarray       # unit quaternion (w, x, y, z)
    t_dir: np.ndarray   # unit translation direction
    t_raw: float        # nonnegative magnitude

    @property
    def t(self) -> np.ndarray:
        return self.t_raw * self.t_dir


def model_forward(gt: GraphTensors, params: ModelParams, config: ModelConfig):
    """Run the stack; returns (ModelOutput, cache) for a later backward."""
    if gt.n == 0:
        raise EmptyGraphError("empty graph")
    H = gt.x
    layer_caches = []
    for i, spec in enumerate(config.layers):
        _check_shape(H, spec)
        p = f"L{i}"
        T = params.tensors
        if spec.kind == "gcn":
            H, c = gcn_forward(H, gt, T[f"{p}.W"], T[f"{p}.b"], spec.activation)
        elif spec.kind == "gat":
            H, c = gat_forward(H, gt, T[f"{p}.W"], T[f"{p}.a_src"],
                               T[f"{p}.a_dst"], T[f"{p}.b"], spec.activation)
        elif spec.kind == "gin":
            H, c = gin_forward(H, gt, T[f"{p}.eps"], T[f"{p}.W1"], T[f"{p}.b1"],
                               T[f"{p}.W2"], T[f"{p}.b2"], spec.activation)
        else:
            H, c = linear_forward(H, T[f"{p}.W"], T[f"{p}.b"], spec.activation)
        layer_caches.append(c)

    z = pool(H, config.pooling)
    T = params.tensors
    m_pre = z @ T["mlp1.W"] + T["mlp1.b"]
    m = np.maximum(m_pre, 0.0)
    t_out = m @ T["head_t.W"] + T["head_t.b"]
    q_out = m @ T["head_q.W"] + T["head_q.b"]

    v = t_out[:3]
    nv = float(np.linalg.norm(v))
    if nv < 1e-300:
        raise InvalidInputError("translation head produced an exactly zero vector")
    t_dir = v / nv
    s_raw = float(t_out[3])
    t_raw = _softplus(s_raw)
    nq = float(np.linalg.norm(q_out))
    if nq < 1e-300:
        raise InvalidInputError("quaternion head produced an exactly zero vector")
    q = q_out / nq

    cache = {"layers": layer_caches, "n": gt.n, "gt": gt, "z": z,
             "m_pre": m_pre, "m": m, "t_out": t_out, "q_out": q_out,
             "v": v, "nv": nv, "t_dir": t_dir, "s_raw": s_raw,
             "q": q, "nq": nq, "config": config}
    return ModelOutput(q, t_dir, t_raw), cache


def model_backward(cache, dq, dt_dir, dt_raw, params: ModelParams) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of every parameter.

    Upstream gradients are taken with respect to the normalized outputs
    (q, t_dir) and the scalar t_raw.
    """
    if cache is None:
        raise StateError("backward called without a cached forward pass")
    config: ModelConfig = cache["config"]
    gt: GraphTensors = cache["gt"]
    T = params.tensors
    grads = {k: np.zeros_like(v) for k, v in T.items()}

    dq = np.asarray(dq, dtype=float).reshape(4)
    dt_dir = np.asarray(dt_dir, dtype=float).reshape(3)
    dt_raw = float(dt_raw)

    q, nq = cache["q"], cache["nq"]
    dq_out = (dq - (q @ dq) * q) / nq
    t_dir, nv = cache["t_dir"], cache["nv"]
    dv = (dt_dir - (t_dir @ dt_dir) * t_dir) / nv
    ds_raw = dt_raw * _sigmoid(cache["s_raw"])
    dt_out = np.concatenate([dv, [ds_raw]])

    m = cache["m"]
    grads["head_t.W"] = np.outer(m, dt_out)
    grads["head_t.b"] = dt_out
    grads["head_q.W"] = np.outer(m, dq_out)
    grads["head_q.b"] = dq_out
    dm = T["head_t.W"] @ dt_out + T["head_q.W"] @ dq_out
    dm_pre = dm * (cache["m_pre"] > 0)
    grads["mlp1.W"] = np.outer(cache["z"], dm_pre)
    grads["mlp1.b"] = dm_pre
    dz = T["mlp1.W"] @ dm_pre

    dH = _pool_backward(dz, cache["n"], config.pooling)
    for i in reversed(range(len(config.layers))):
        spec = config.layers[i]
        c = cache["layers"][i]
        p = f"L{i}"
        if spec.kind == "gcn":
            dH, g = gcn_backward(dH, c, gt)
        elif spec.kind == "gat":
            dH, g = gat_backward(dH, c, gt)
        elif spec.kind == "gin":
            dH, g = gin_backward(dH, c, gt)
        else:
            dH, g = linear_backward(dH, c)
        for name, val in g.items():
            grads[f"{p}.{name}"] = val
    return grads


def forward_embeddings(gt: GraphTensors, params: ModelParams, config: ModelConfig,
                       layer: int):
    """Node embeddings H^(layer) plus their pooled descriptor.

    Layer 0 is the input feature matrix; layer L the output of the L-th
    graph layer."""
    if not (0 <= layer <= len(config.layers)):
        raise InvalidInputError(
            f"layer {layer} out of range 0..{len(config.layers)}")
    H = gt.x
    for i, spec in enumerate(config.layers[:layer]):
        _check_shape(H, spec)
        p = f"L{i}"
        T = params.tensors
        if spec.kind == "gcn":
            H, _ = gcn_forward(H, gt, T[f"{p}.W"], T[f"{p}.b"], spec.activation)
        elif spec.kind == "gat":
            H, _ = gat_forward(H, gt, T[f"{p}.W"], T[f"{p}.a_src"],
                               T[f"{p}.a_dst"], T[f"{p}.b"], spec.activation)
        elif spec.kind == "gin":
            H, _ = gin_forward(H, gt, T[f"{p}.eps"], T[f"{p}.W1"], T[f"{p}.b1"],
                               T[f"{p}.W2"], T[f"{p}.b2"], spec.activation)
        else:
            H, _ = linear_forward(H, T[f"{p}.W"], T[f"{p}.b"], spec.activation)
    return H, pool(H, config.pooling)


class Model:
    """Stateful wrapper pairing a config with parameters; single-writer."""

    def __init__(self, config: ModelConfig, params: ModelParams):
        self.config = config
        self.params = params
        self._cache = None

    @classmethod
    def init(cls, config: ModelConfig, seed=0) -> "Model":
        return cls(config, init_params(config, seed))

    def forward(self, gtensors: GraphTensors) -> ModelOutput:
        out, self._cache = model_forward(gtensors, self.params, self.config)
        return out

    def backward(self, dq, dt_dir, dt_raw) -> dict[str, np.ndarray]:
        if self._cache is None:
            raise StateError("backward called before forward")
        grads = model_backward(self._cache, dq, dt_dir, dt_raw, self.params)
        self._cache = None
        return grads


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def adam_step(params: ModelParams, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update from params.grads."""
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, theta in params.tensors.items():
        g = params.grads[k]
        params.m[k] = beta1 * params.m[k] + (1.0 - beta1) * g
        params.v[k] = beta2 * params.v[k] + (1.0 - beta2) * g * g
        m_hat = params.m[k] / c1
        v_hat = params.v[k] / c2
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CKPT_HEADER = "# epigraph-ckpt v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def _spec_str(spec: LayerSpec) -> str:
    return f"{spec.kind}:{spec.in_dim}:{spec.out_dim}:{spec.heads}:{spec.activation}"


def _spec_parse(s: str) -> LayerSpec:
    kind, i, o, h, act = s.split(":")
    return LayerSpec(kind, int(i), int(o), int(h), act)


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    meta: dict | None = None) -> None:
    lines = [CKPT_HEADER]
    layer_str = ",".join(_spec_str(s) for s in config.layers)
    lines.append(f"config layers {layer_str if layer_str else 'none'}")
    lines.append(f"config pooling {config.pooling}")
    lines.append(f"config hidden {config.hidden}")
    for k, v in (meta or {}).items():
        lines.append(f"meta {k} {v}")
    lines.append(f"step {params.step}")
    for name, tensor in params.tensors.items():
        shape = " ".join(str(d) for d in tensor.shape)
        lines.append(f"tensor {name} {tensor.ndim}{(' ' + shape) if shape else ''}")
        lines.append(" ".join(_fmt(v) for v in np.ravel(tensor)))
        lines.append(" ".join(_fmt(v) for v in np.ravel(params.m[name])))
        lines.append(" ".join(_fmt(v) for v in np.ravel(params.v[name])))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Returns (params, config, meta) reproducing forwards bit-identically."""
    with open(path) as f:
        raw = f.read().splitlines()
    if not raw or raw[0] != CKPT_HEADER:
        raise SchemaVersionError("missing or unsupported checkpoint header", line=1)
    pos = 1
    cfg = {}
    meta = {}
    while pos < len(raw) and raw[pos].startswith(("config ", "meta ")):
        tag, key, *rest = raw[pos].split(maxsplit=2)
        val = rest[0] if rest else ""
        (cfg if tag == "config" else meta)[key] = val
        pos += 1
    try:
        layer_str = cfg["layers"]
        layers = () if layer_str == "none" else tuple(
            _spec_parse(s) for s in layer_str.split(","))
        config = ModelConfig(layers, pooling=cfg["pooling"], hidden=int(cfg["hidden"]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"bad checkpoint config: {e}") from None
    if pos >= len(raw) or not raw[pos].startswith("step "):
        raise FormatError("missing step record", line=pos + 1)
    step = int(raw[pos].split()[1])
    pos += 1

    tensors, ms, vs = {}, {}, {}
    while pos < len(raw) and raw[pos].startswith("tensor "):
        parts = raw[pos].split()
        name, ndim = parts[1], int(parts[2])
        shape = tuple(int(d) for d in parts[3:3 + ndim])
        if pos + 3 >= len(raw):
            raise FormatError(f"truncated record for tensor {name}", line=pos + 1)
        pos += 1

        def read_array(p):
            try:
                vals = np.array([float(v) for v in raw[p].split()])
                return vals.reshape(shape)
            except ValueError as e:
                raise FormatError(f"bad values for tensor {name}: {e}",
                                  line=p + 1) from None

        tensors[name] = read_array(pos)
        ms[name] = read_array(pos + 1)
        vs[name] = read_array(pos + 2)
        pos += 3
    params = ModelParams(tensors)
    params.m = ms
    params.v = vs
    params.step = step
    return params, config, meta


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    term: str
    tensor: str
    rel_err: float
    ok: bool


def grad_check(config: ModelConfig, gtensors: GraphTensors, target,
               params: ModelParams | None = None, seed: int = 0,
               h: float = 1e-6, tolerance: float = 1e-5,
               terms=None, corrupt: str | None = None) -> list[GradCheckEntry]:
    """Compare analytic parameter gradients against central differences.

    Relative error per (loss term, tensor) is max|analytic - fd| divided
    by max(|analytic|_inf, |fd|_inf, 1e-3); the floor keeps finite-
    difference noise on zero-gradient tensors from dominating.  The
    ``corrupt`` hook perturbs one tensor's analytic gradient to verify
    the detector itself.
    """
    from . import losses

    if params is None:
        params = init_params(config, seed)
    if not params.tensors:
        return []
    if terms is None:
        terms = list(losses.TERM_GRADS)

    out, cache = model_forward(gtensors, params, config)
    analytic: dict[str, dict[str, np.ndarray]] = {}
    for term in terms:
        _, dq, dt = losses.TERM_GRADS[term](out.q, out.t, target)
        dt_raw = float(dt @ out.t_dir)
        dt_dir = out.t_raw * dt
        analytic[term] = model_backward(cache, dq, dt_dir, dt_raw, params)
    if corrupt is not None:
        for term in terms:
            analytic[term][corrupt] = analytic[term][corrupt] + 1e-3

    fd = {term: {k: np.zeros_like(v) for k, v in params.tensors.items()}
          for term in terms}
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            out_p, _ = model_forward(gtensors, params, config)
            flat[idx] = orig - h
            out_m, _ = model_forward(gtensors, params, config)
            flat[idx] = orig
            for term in terms:
                fp = losses.TERM_VALUES[term](out_p.q, out_p.t, target)
                fm = losses.TERM_VALUES[term](out_m.q, out_m.t, target)
                fd[term][name].reshape(-1)[idx] = (fp - fm) / (2.0 * h)

    report = []
    for term in terms:
        for name in params.tensors:
            a = analytic[term][name]
            f = fd[term][name]
            scale = max(np.abs(a).max(initial=0.0), np.abs(f).max(initial=0.0), 1e-3)
            rel = float(np.abs(a - f).max(initial=0.0) / scale)
            report.append(GradCheckEntry(term, name, rel, rel < tolerance))
    return report
