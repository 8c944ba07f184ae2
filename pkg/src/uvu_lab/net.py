"""Finite-width fully-connected networks with exact hand-written backprop.

Two network families live here:

* :class:`MlpSpec` -- plain multi-head MLPs in either NTK parametrization
  (forward pass rescales each layer by ``sigma_w / sqrt(fan_in)``, weights
  drawn N(0,1)) or standard parametrization with He-uniform init.  These are
  the theory-mode networks whose infinite-width kernels are computed in
  closed form by :mod:`uvu_lab.kernels`.
* :class:`PracticalArchSpec` -- the task-conditioned architecture used by the
  gridworld agents: single-layer state and task encoders joined by
  elementwise multiplication, l2-normalized, a relu trunk, a second l2
  normalization, and a final linear layer producing ``n_actions * n_heads``
  outputs.

All forward/backward passes are pure numpy; gradients are exact reverse-mode
and are validated against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NONLINEARITIES = ("relu", "erf", "identity")


def _phi(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "erf":
        from scipy.special import erf

        return erf(z)
    if name == "identity":
        return z
    raise ValueError(f"unsupported nonlinearity: {name!r}")


def _phi_dot(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        # derivative at exactly 0 is defined as 0
        return (z > 0).astype(z.dtype)
    if name == "erf":
        return (2.0 / np.sqrt(np.pi)) * np.exp(-z * z)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unsupported nonlinearity: {name!r}")


@dataclass(frozen=True)
class MlpSpec:
    """Description of a multi-head fully-connected network.

    ``hidden_widths`` may be empty, in which case the network is a single
    affine map (the linear model used in several closed-form tests).
    """

    input_dim: int
    hidden_widths: tuple[int, ...] = ()
    n_heads: int = 1
    nonlinearity: str = "relu"
    sigma_w: float = 1.0
    sigma_b: float = 0.0
    parametrization: str = "ntk"  # "ntk" | "standard"
    init: str = "unit_gaussian"  # "unit_gaussian" | "he_uniform"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.n_heads < 1:
            raise ValueError("n_heads must be >= 1")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unsupported nonlinearity: {self.nonlinearity!r}")
        if self.parametrization not in ("ntk", "standard"):
            raise ValueError(f"unknown parametrization: {self.parametrization!r}")
        if self.init not in ("unit_gaussian", "he_uniform"):
            raise ValueError(f"unknown init: {self.init!r}")

    @property
    def depth(self) -> int:
        """Number of hidden layers."""
        return len(self.hidden_widths)

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.n_heads)

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum(dims[l] * dims[l + 1] + dims[l + 1] for l in range(len(dims) - 1))

    def single_head(self) -> "MlpSpec":
        """The same trunk with a one-row output layer."""
        return MlpSpec(
            self.input_dim,
            self.hidden_widths,
            1,
            self.nonlinearity,
            self.sigma_w,
            self.sigma_b,
            self.parametrization,
            self.init,
        )


PARAM_ROLES = ("theta", "vartheta", "psi", "rnd_predictor", "rnd_target")
_FROZEN_ROLES = ("psi", "rnd_target")


@dataclass
class ParamVector:
    """Flat parameter vector plus its role in a model.

    Vectors tagged with a fixed-target role are made read-only at
    construction time; they are never updated after initialization.
    """

    values: np.ndarray
    role: str = "theta"

    def __post_init__(self):
        if self.role not in PARAM_ROLES:
            raise ValueError(f"unknown parameter role: {self.role!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.role in _FROZEN_ROLES:
            self.values.setflags(write=False)

    def copy(self, role: str | None = None) -> "ParamVector":
        return ParamVector(self.values.copy(), role or self.role)


def _split_params(spec: MlpSpec, params: np.ndarray):
    """Views of the flat vector as per-layer (W, b) pairs."""
    dims = spec.layer_dims
    layers = []
    off = 0
    for l in range(len(dims) - 1):
        n_in, n_out = dims[l], dims[l + 1]
        w = params[off : off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = params[off : off + n_out]
        off += n_out
        layers.append((w, b))
    if off != params.size:
        raise ValueError(
            f"parameter vector has {params.size} entries, spec requires {off}"
        )
    return layers


def init_params(spec: MlpSpec, seed) -> np.ndarray:
    """Draw a flat parameter vector for ``spec``.

    ``unit_gaussian`` draws every entry i.i.d. N(0,1) (theory mode, NTK
    parametrization supplies the scaling in the forward pass).
    ``he_uniform`` draws weights uniform on +-sqrt(6/fan_in) and zero biases.
    """
    rng = np.random.default_rng(seed)
    if spec.init == "unit_gaussian":
        return rng.standard_normal(spec.n_params)
    dims = spec.layer_dims
    parts = []
    for l in range(len(dims) - 1):
        n_in, n_out = dims[l], dims[l + 1]
        limit = np.sqrt(6.0 / n_in)
        parts.append(rng.uniform(-limit, limit, size=n_in * n_out))
        parts.append(np.zeros(n_out))
    return np.concatenate(parts)


def forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Network outputs; shape (n_heads,) for one input, (B, n_heads) batched."""
    out, _ = forward_with_cache(spec, params, x)
    return out


def forward_with_cache(spec: MlpSpec, params: np.ndarray, x: np.ndarray):
    """Forward pass returning outputs and the activations needed by backprop."""
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    h = x.reshape(1, -1) if squeeze else x
    if h.shape[1] != spec.input_dim:
        raise ValueError(f"input dim {h.shape[1]} != spec input_dim {spec.input_dim}")
    layers = _split_params(spec, params)
    hs = [h]  # post-activations entering each layer
    zs = []  # pre-activations
    for l, (w, b) in enumerate(layers):
        if spec.parametrization == "ntk":
            z = (spec.sigma_w / np.sqrt(h.shape[1])) * (h @ w.T) + spec.sigma_b * b
        else:
            z = h @ w.T + b
        zs.append(z)
        if l < len(layers) - 1:
            h = _phi(spec.nonlinearity, z)
            hs.append(h)
    out = zs[-1]
    cache = (hs, zs)
    return (out[0] if squeeze else out), cache


def backprop(spec: MlpSpec, params: np.ndarray, cache, dout: np.ndarray) -> np.ndarray:
    """Exact gradient of ``sum(out * dout)`` w.r.t. the flat parameters.

    ``dout`` has shape (B, n_heads): the adjoint of the network outputs.
    """
    hs, zs = cache
    layers = _split_params(spec, params)
    dout = np.atleast_2d(np.asarray(dout, dtype=params.dtype))
    grads_w = [None] * len(layers)
    grads_b = [None] * len(layers)
    delta = dout
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        h_in = hs[l]
        if spec.parametrization == "ntk":
            scale = spec.sigma_w / np.sqrt(h_in.shape[1])
            grads_w[l] = scale * (delta.T @ h_in)
            grads_b[l] = spec.sigma_b * delta.sum(axis=0)
            dh = scale * (delta @ w)
        else:
            grads_w[l] = delta.T @ h_in
            grads_b[l] = delta.sum(axis=0)
            dh = delta @ w
        if l > 0:
            delta = dh * _phi_dot(spec.nonlinearity, zs[l - 1])
    flat = np.empty_like(params)
    off = 0
    for l in range(len(layers)):
        n = grads_w[l].size
        flat[off : off + n] = grads_w[l].ravel()
        off += n
        n = grads_b[l].size
        flat[off : off + n] = grads_b[l]
        off += n
    return flat


def grad(spec: MlpSpec, params: np.ndarray, x: np.ndarray, head: int = 0) -> np.ndarray:
    """Exact gradient of the scalar output of one head at a single input."""
    _, cache = forward_with_cache(spec, params, x)
    dout = np.zeros((1, spec.n_heads), dtype=params.dtype)
    dout[0, head] = 1.0
    return backprop(spec, params, cache, dout)


def empirical_ntk(spec: MlpSpec, params: np.ndarray, xs: np.ndarray, head: int = 0) -> np.ndarray:
    """Gram matrix of parameter gradients of one head over a batch of inputs.

    Computed layer by layer from forward activations and backprop deltas;
    identical to forming the flat gradients explicitly and taking inner
    products, but without materializing them.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=params.dtype))
    _, (hs, zs) = forward_with_cache(spec, params, xs)
    layers = _split_params(spec, params)
    n = xs.shape[0]
    theta = np.zeros((n, n), dtype=params.dtype)
    delta = np.zeros((n, spec.n_heads), dtype=params.dtype)
    delta[:, head] = 1.0
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        h_in = hs[l]
        if spec.parametrization == "ntk":
            w_scale = spec.sigma_w**2 / h_in.shape[1]
            b_scale = spec.sigma_b**2
            dh_scale = spec.sigma_w / np.sqrt(h_in.shape[1])
        else:
            w_scale, b_scale, dh_scale = 1.0, 1.0, 1.0
        dd = delta @ delta.T
        theta += dd * (w_scale * (h_in @ h_in.T) + b_scale)
        if l > 0:
            delta = (dh_scale * (delta @ w)) * _phi_dot(spec.nonlinearity, zs[l - 1])
    return theta


# ---------------------------------------------------------------------------
# Practical task-conditioned architecture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PracticalArchSpec:
    """State/task encoders joined by elementwise product, l2-normalized trunk.

    Output is a (n_actions, n_heads) table per input; Q-networks use
    ``n_heads=1`` while multi-head uncertainty models share the trunk across
    heads.
    """

    state_dim: int
    task_dim: int
    embed_width: int = 512
    trunk_widths: tuple[int, ...] = (512, 512, 512)
    n_actions: int = 4
    n_heads: int = 1
    l2_eps: float = 1e-12

    @property
    def out_dim(self) -> int:
        return self.n_actions * self.n_heads

    @property
    def n_params(self) -> int:
        n = self.state_dim * self.embed_width + self.embed_width
        n += self.task_dim * self.embed_width + self.embed_width
        d = self.embed_width
        for w in self.trunk_widths:
            n += d * w + w
            d = w
        n += d * self.out_dim + self.out_dim
        return n


def _split_practical(spec: PracticalArchSpec, params: np.ndarray):
    shapes = [(spec.embed_width, spec.state_dim), (spec.embed_width, spec.task_dim)]
    d = spec.embed_width
    for w in spec.trunk_widths:
        shapes.append((w, d))
        d = w
    shapes.append((spec.out_dim, d))
    layers = []
    off = 0
    for n_out, n_in in shapes:
        w = params[off : off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = params[off : off + n_out]
        off += n_out
        layers.append((w, b))
    if off != params.size:
        raise ValueError("parameter vector length mismatch")
    return layers


def init_practical_params(spec: PracticalArchSpec, seed, dtype=np.float64) -> np.ndarray:
    """He-uniform weights, zero biases, for the practical architecture."""
    rng = np.random.default_rng(seed)
    shapes = [(spec.embed_width, spec.state_dim), (spec.embed_width, spec.task_dim)]
    d = spec.embed_width
    for w in spec.trunk_widths:
        shapes.append((w, d))
        d = w
    shapes.append((spec.out_dim, d))
    parts = []
    for n_out, n_in in shapes:
        limit = np.sqrt(6.0 / n_in)
        parts.append(rng.uniform(-limit, limit, size=n_in * n_out))
        parts.append(np.zeros(n_out))
    return np.concatenate(parts).astype(dtype)


def _l2_normalize(x: np.ndarray, eps: float):
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    denom = np.maximum(norm, eps)
    return x / denom, denom


def practical_forward_with_cache(spec: PracticalArchSpec, params: np.ndarray, s: np.ndarray, z: np.ndarray):
    """Outputs of shape (B, n_actions, n_heads) plus backprop cache."""
    s = np.atleast_2d(np.asarray(s, dtype=params.dtype))
    z = np.atleast_2d(np.asarray(z, dtype=params.dtype))
    layers = _split_practical(spec, params)
    (ws, bs_), (wz, bz) = layers[0], layers[1]
    es = s @ ws.T + bs_
    ez = z @ wz.T + bz
    joint = es * ez
    j_norm, j_denom = _l2_normalize(joint, spec.l2_eps)
    h = j_norm
    hs = [h]
    zs = []
    for w, b in layers[2:-1]:
        zpre = h @ w.T + b
        zs.append(zpre)
        h = np.maximum(zpre, 0.0)
        hs.append(h)
    t_norm, t_denom = _l2_normalize(h, spec.l2_eps)
    w_out, b_out = layers[-1]
    out = t_norm @ w_out.T + b_out
    out = out.reshape(-1, spec.n_actions, spec.n_heads)
    cache = (s, z, es, ez, joint, j_norm, j_denom, hs, zs, t_norm, t_denom)
    return out, cache


def practical_forward(spec: PracticalArchSpec, params: np.ndarray, s: np.ndarray, z: np.ndarray) -> np.ndarray:
    out, _ = practical_forward_with_cache(spec, params, s, z)
    return out


def _l2_normalize_backward(dy: np.ndarray, x: np.ndarray, y: np.ndarray, denom: np.ndarray, eps: float):
    # y = x / max(||x||, eps); Jacobian is (I - y y^T)/||x|| where the norm
    # dominates eps, and 1/eps * I otherwise.
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    active = norm > eps
    dx = dy / denom
    corr = (dy * y).sum(axis=1, keepdims=True) * y / denom
    return np.where(active, dx - corr, dy / eps)


def practical_backprop(spec: PracticalArchSpec, params: np.ndarray, cache, dout: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(out * dout)``; ``dout`` shape (B, n_actions, n_heads)."""
    s, z, es, ez, joint, j_norm, j_denom, hs, zs, t_norm, t_denom = cache
    layers = _split_practical(spec, params)
    dout = dout.reshape(dout.shape[0], spec.out_dim)
    w_out, _ = layers[-1]
    gw_out = dout.T @ t_norm
    gb_out = dout.sum(axis=0)
    dh = dout @ w_out
    dh = _l2_normalize_backward(dh, hs[-1], t_norm, t_denom, spec.l2_eps)
    grads = [(gw_out, gb_out)]
    n_trunk = len(layers) - 3
    for l in range(n_trunk - 1, -1, -1):
        w, _ = layers[l + 2]
        delta = dh * (zs[l] > 0)
        grads.append((delta.T @ hs[l], delta.sum(axis=0)))
        dh = delta @ w
    dj = _l2_normalize_backward(dh, joint, j_norm, j_denom, spec.l2_eps)
    des = dj * ez
    dez = dj * es
    (ws, _), (wz, _) = layers[0], layers[1]
    g_ws = (des.T @ s, des.sum(axis=0))
    g_wz = (dez.T @ z, dez.sum(axis=0))
    ordered = [g_ws, g_wz] + grads[::-1]
    flat = np.empty_like(params)
    off = 0
    for gw, gb in ordered:
        flat[off : off + gw.size] = gw.ravel()
        off += gw.size
        flat[off : off + gb.size] = gb
        off += gb.size
    return flat


def practical_grad(spec: PracticalArchSpec, params: np.ndarray, s: np.ndarray, z: np.ndarray, action: int = 0, head: int = 0) -> np.ndarray:
    """Gradient of one (action, head) output at a single (state, task) input."""
    _, cache = practical_forward_with_cache(spec, params, s, z)
    dout = np.zeros((1, spec.n_actions, spec.n_heads), dtype=params.dtype)
    dout[0, action, head] = 1.0
    return practical_backprop(spec, params, cache, dout)
