"""Exact finite-dimensional oracle for the closed-form TD posterior.

A linear feature model f(x, theta) = theta . phi(x) with theta ~ N(0, I_p)
has NTK and NNGP kernels both exactly equal to phi(x) . phi(x'), with no
width error.  Gradient flow on the stop-gradient TD loss admits a closed-form
solution per initialization, so the distribution of converged predictions can
be sampled exactly at scale and compared against the analytic Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelPair
from .posterior import TdGaussian, _gamma_vector


class SingularTdSystem(Exception):
    """The feature-space TD system is singular (e.g. duplicated inputs)."""


@dataclass(frozen=True)
class LinearFeatureModel:
    """Fixed linear feature map phi(x) = projection @ x.

    Multi-head models reuse the same feature map with independent parameter
    blocks per head, so heads are exactly independent.
    """

    projection: np.ndarray  # (p, d_in)

    @property
    def n_features(self) -> int:
        return self.projection.shape[0]

    def features(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        return xs @ self.projection.T

    def kernel_blocks(self, sets: dict[str, np.ndarray]) -> dict[tuple[str, str], KernelPair]:
        """Exact kernel blocks (NTK == NNGP == feature Gram) over named sets."""
        feats = {name: self.features(xs) for name, xs in sets.items()}
        out = {}
        for a, fa in feats.items():
            for b, fb in feats.items():
                gram = fa @ fb.T
                out[(a, b)] = KernelPair(theta=gram, kappa=gram.copy())
        return out


def random_feature_model(d_in: int, n_features: int, seed) -> LinearFeatureModel:
    """Random Gaussian projection features, scaled to unit expected norm."""
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((n_features, d_in)) / np.sqrt(n_features)
    return LinearFeatureModel(projection=proj)


def _check_solvable(delta: np.ndarray, phi_train: np.ndarray):
    uniq = np.unique(phi_train.round(decimals=12), axis=0)
    if uniq.shape[0] < phi_train.shape[0]:
        raise SingularTdSystem("duplicate training features make the TD system singular")
    cond = np.linalg.cond(delta)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularTdSystem(f"TD system is singular or near-singular (cond={cond:.3e})")


@dataclass
class LinearOracleResult:
    """Exact sampled statistics of converged linear TD predictions."""

    mean: np.ndarray  # (n_test,) empirical mean over seeds
    cov: np.ndarray  # (n_test, n_test) empirical covariance (ddof=1)
    samples: np.ndarray | None  # (n_seeds, n_test) if kept
    half_sq_errors: np.ndarray | None  # (n_seeds, n_test) per-head-mean 0.5*eps^2


def converge_map(phi_test: np.ndarray, phi_train: np.ndarray, phi_next: np.ndarray, gamma):
    """(M, Delta) with M = Theta_testX Delta^-1 for the linear TD system."""
    g = _gamma_vector(gamma, phi_train.shape[0])
    theta_tx = phi_test @ phi_train.T
    delta = phi_train @ phi_train.T - g[:, None] * (phi_next @ phi_train.T)
    _check_solvable(delta, phi_train)
    m = np.linalg.solve(delta.T, theta_tx.T).T
    return m, delta, g


def linear_oracle_solve(
    model: LinearFeatureModel,
    x_test: np.ndarray,
    x_train: np.ndarray,
    x_next: np.ndarray,
    gamma,
    rewards: np.ndarray,
    n_seeds: int,
    seed,
    *,
    n_heads: int = 0,
    keep_samples: bool = False,
) -> LinearOracleResult:
    """Sample the exact converged-prediction distribution over initializations.

    Per seed, theta_0 ~ N(0, I_p) and the gradient-flow limit is computed in
    closed form.  When ``n_heads`` > 0, additionally samples the mean over
    heads of half squared prediction errors of an online/target pair trained
    on target-generated rewards (the rewards argument is ignored for that
    part; the error map is reward-free).
    """
    if model.n_features > 512:
        raise ValueError("feature dimension too large for the exactness oracle")
    phi_t = model.features(x_test)
    phi_x = model.features(x_train)
    phi_xp = model.features(x_next)
    m, _, g = converge_map(phi_t, phi_x, phi_xp, gamma)
    rewards = np.asarray(rewards, dtype=np.float64)
    rng = np.random.default_rng(seed)
    p = model.n_features

    theta0 = rng.standard_normal((p, n_seeds))
    f0_t = phi_t @ theta0
    f0_x = phi_x @ theta0
    f0_xp = phi_xp @ theta0
    resid0 = f0_x - g[:, None] * f0_xp - rewards[:, None]
    f_inf = (f0_t - m @ resid0).T  # (n_seeds, n_test)

    half_sq = None
    if n_heads > 0:
        # online-minus-target initial gap is a linear function with parameter
        # variance 2; heads use independent parameter blocks
        acc = np.zeros((n_seeds, phi_t.shape[0]))
        for _ in range(n_heads):
            e0 = np.sqrt(2.0) * rng.standard_normal((p, n_seeds))
            e_t = phi_t @ e0
            e_x = phi_x @ e0
            e_xp = phi_xp @ e0
            eps = (e_t - m @ (e_x - g[:, None] * e_xp)).T
            acc += 0.5 * eps**2
        half_sq = acc / n_heads

    mean = f_inf.mean(axis=0)
    cov = np.cov(f_inf, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return LinearOracleResult(
        mean=mean,
        cov=cov,
        samples=f_inf if keep_samples else None,
        half_sq_errors=half_sq,
    )


def analytic_posterior(model: LinearFeatureModel, x_test, x_train, x_next, gamma, rewards) -> TdGaussian:
    """Closed-form posterior through the generic kernel path (zero width error)."""
    from .posterior import td_posterior

    blocks = model.kernel_blocks({"test": x_test, "train": x_train, "next": x_next})
    return td_posterior(blocks, gamma, rewards)


def linear_td_gd(
    phi_train: np.ndarray,
    phi_next: np.ndarray,
    rewards: np.ndarray,
    gamma,
    theta0: np.ndarray,
    learning_rate: float,
    n_steps: int,
    tol: float = 0.0,
) -> np.ndarray:
    """Plain semi-gradient descent on the linear TD loss, vectorized over columns.

    ``theta0`` has shape (p, K): K independent members train simultaneously.
    This is the discrete-time route checked against the closed-form limit.
    """
    g = _gamma_vector(gamma, phi_train.shape[0])
    theta = np.array(theta0, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    for _ in range(n_steps):
        resid = phi_train @ theta - g[:, None] * (phi_next @ theta) - rewards[:, None]
        theta -= learning_rate * (phi_train.T @ resid)
        if tol and np.max(np.abs(resid)) < tol:
            break
    return theta
