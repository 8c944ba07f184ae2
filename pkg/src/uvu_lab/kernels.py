"""Closed-form infinite-width kernels for fully-connected networks.

For a network described by :class:`~uvu_lab.net.MlpSpec` with L hidden layers
the output-at-initialization kernel (NNGP) and the gradient inner-product
kernel (NTK) are computed by the layer recursion

    kappa^1(x, x') = sigma_w^2 / n_0 * x.x' + sigma_b^2
    kappa^l        = sigma_b^2 + sigma_w^2 * E[phi(u) phi(v)]
    theta^1        = kappa^1
    theta^l        = theta^{l-1} * kappa_dot^l + kappa^l
    kappa_dot^l    = sigma_w^2 * E[phi'(u) phi'(v)]

where (u, v) is a centered bivariate Gaussian with covariance given by the
previous layer's kernel values at (x,x), (x,x'), (x',x').  The Gaussian
expectations have closed forms for relu (arc-cosine kernel), erf, and the
identity.  A Monte Carlo estimate of the same expectations is provided as an
independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import MlpSpec

_EPS_VAR = 1e-30


def pair_expectation(nonlinearity: str, k11, k12, k22):
    """E[phi(u) phi(v)] for (u,v) ~ N(0, [[k11,k12],[k12,k22]]), elementwise."""
    k11 = np.asarray(k11, dtype=np.float64)
    k12 = np.asarray(k12, dtype=np.float64)
    k22 = np.asarray(k22, dtype=np.float64)
    if nonlinearity == "identity":
        return k12 + np.zeros_like(k11)
    if nonlinearity == "relu":
        prod = np.maximum(k11 * k22, _EPS_VAR)
        root = np.sqrt(prod)
        cos = np.clip(k12 / root, -1.0, 1.0)
        theta = np.arccos(cos)
        val = (root / (2.0 * np.pi)) * (np.sin(theta) + (np.pi - theta) * cos)
        return np.where(k11 * k22 <= _EPS_VAR, 0.0, val)
    if nonlinearity == "erf":
        denom = np.sqrt((1.0 + 2.0 * k11) * (1.0 + 2.0 * k22))
        return (2.0 / np.pi) * np.arcsin(np.clip(2.0 * k12 / denom, -1.0, 1.0))
    raise ValueError(f"unsupported nonlinearity: {nonlinearity!r}")


def pair_derivative_expectation(nonlinearity: str, k11, k12, k22):
    """E[phi'(u) phi'(v)] for the same bivariate Gaussian, elementwise."""
    k11 = np.asarray(k11, dtype=np.float64)
    k12 = np.asarray(k12, dtype=np.float64)
    k22 = np.asarray(k22, dtype=np.float64)
    if nonlinearity == "identity":
        return np.ones_like(k12 + k11)
    if nonlinearity == "relu":
        prod = np.maximum(k11 * k22, _EPS_VAR)
        cos = np.clip(k12 / np.sqrt(prod), -1.0, 1.0)
        theta = np.arccos(cos)
        val = (np.pi - theta) / (2.0 * np.pi)
        return np.where(k11 * k22 <= _EPS_VAR, 0.0, val)
    if nonlinearity == "erf":
        det = (1.0 + 2.0 * k11) * (1.0 + 2.0 * k22) - 4.0 * k12 * k12
        return (4.0 / np.pi) / np.sqrt(np.maximum(det, _EPS_VAR))
    raise ValueError(f"unsupported nonlinearity: {nonlinearity!r}")


def pair_expectation_mc(nonlinearity: str, k11: float, k12: float, k22: float, n_samples: int, seed) -> tuple[float, float]:
    """Monte Carlo (E[phi phi'], E[phi' phi']) against the closed forms."""
    from .net import _phi, _phi_dot

    rng = np.random.default_rng(seed)
    cov = np.array([[k11, k12], [k12, k22]])
    # sample via Cholesky with a tiny jitter tolerance for semidefinite input
    w, v = np.linalg.eigh(cov)
    w = np.clip(w, 0.0, None)
    a = v @ np.diag(np.sqrt(w))
    uv = rng.standard_normal((n_samples, 2)) @ a.T
    u, vv = uv[:, 0], uv[:, 1]
    e = float(np.mean(_phi(nonlinearity, u) * _phi(nonlinearity, vv)))
    e_dot = float(np.mean(_phi_dot(nonlinearity, u) * _phi_dot(nonlinearity, vv)))
    return e, e_dot


@dataclass
class KernelLayerState:
    """Per-layer kernel values over a pair of point sets.

    ``kappa_dot`` is the derivative kernel used when producing this layer's
    NTK value, i.e. ``theta = theta_prev * kappa_dot + kappa`` holds
    entrywise (``kappa_dot`` is all-ones at the first layer).
    """

    kappa: np.ndarray
    kappa_dot: np.ndarray
    theta: np.ndarray
    kappa_diag_x: np.ndarray
    kappa_diag_y: np.ndarray


@dataclass
class KernelPair:
    """NTK matrix ``theta`` and NNGP matrix ``kappa`` over a pair of sets."""

    theta: np.ndarray
    kappa: np.ndarray


def unit_sphere(xs: np.ndarray) -> np.ndarray:
    """Project inputs onto the unit sphere (theory-mode preprocessing)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    norms = np.linalg.norm(xs, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero input onto the unit sphere")
    return xs / norms


def kernel_layers(spec: MlpSpec, xs: np.ndarray, ys: np.ndarray | None = None) -> list[KernelLayerState]:
    """Full layer-by-layer recursion over the cross block of two point sets."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = xs if ys is None else np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape[1] != spec.input_dim or ys.shape[1] != spec.input_dim:
        raise ValueError("input dimension does not match spec")
    sw2, sb2 = spec.sigma_w**2, spec.sigma_b**2
    n0 = spec.input_dim
    kappa = sw2 / n0 * (xs @ ys.T) + sb2
    diag_x = sw2 / n0 * np.einsum("ij,ij->i", xs, xs) + sb2
    diag_y = sw2 / n0 * np.einsum("ij,ij->i", ys, ys) + sb2
    theta = kappa.copy()
    states = [
        KernelLayerState(kappa.copy(), np.ones_like(kappa), theta.copy(), diag_x.copy(), diag_y.copy())
    ]
    for _ in range(spec.depth):
        k11 = diag_x[:, None]
        k22 = diag_y[None, :]
        e = pair_expectation(spec.nonlinearity, k11, kappa, k22)
        e_dot = pair_derivative_expectation(spec.nonlinearity, k11, kappa, k22)
        kappa_next = sb2 + sw2 * e
        kappa_dot = sw2 * e_dot
        diag_x = sb2 + sw2 * pair_expectation(spec.nonlinearity, diag_x, diag_x, diag_x)
        diag_y = sb2 + sw2 * pair_expectation(spec.nonlinearity, diag_y, diag_y, diag_y)
        theta = theta * kappa_dot + kappa_next
        kappa = kappa_next
        states.append(KernelLayerState(kappa.copy(), kappa_dot, theta.copy(), diag_x.copy(), diag_y.copy()))
    return states


def nngp_kernel(spec: MlpSpec, xs: np.ndarray, ys: np.ndarray | None = None) -> np.ndarray:
    """Closed-form NNGP kernel matrix kappa(xs, ys)."""
    return kernel_layers(spec, xs, ys)[-1].kappa


def ntk_kernel(spec: MlpSpec, xs: np.ndarray, ys: np.ndarray | None = None) -> KernelPair:
    """Closed-form NTK and NNGP matrices over (xs, ys)."""
    last = kernel_layers(spec, xs, ys)[-1]
    return KernelPair(theta=last.theta, kappa=last.kappa)


def kernel_blocks(spec: MlpSpec, sets: dict[str, np.ndarray]) -> dict[tuple[str, str], KernelPair]:
    """All pairwise kernel blocks over named point sets.

    Computed from a single recursion over the stacked points, so blocks are
    exactly consistent with each other.
    """
    names = list(sets)
    arrays = [np.atleast_2d(np.asarray(sets[n], dtype=np.float64)) for n in names]
    stacked = np.vstack(arrays)
    pair = ntk_kernel(spec, stacked)
    out = {}
    offsets = np.cumsum([0] + [a.shape[0] for a in arrays])
    for i, ni in enumerate(names):
        for j, nj in enumerate(names):
            sl_i = slice(offsets[i], offsets[i + 1])
            sl_j = slice(offsets[j], offsets[j + 1])
            out[(ni, nj)] = KernelPair(pair.theta[sl_i, sl_j], pair.kappa[sl_i, sl_j])
    return out
