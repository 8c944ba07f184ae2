"""Closed-form post-convergence Gaussians for semi-gradient TD training.

For wide networks trained by gradient flow on the stop-gradient TD loss over
transitions (X -> X'), converged predictions at test points are an affine
image of the network's Gaussian initialization.  With NTK matrix Theta and
NNGP matrix kappa, the closed form is

    mean  = Theta_TX Delta^-1 r
    cov   = kappa_TT - (Theta_TX Delta^-1 Lambda_T + h.c.)
            + Theta_TX Delta^-1 (Lambda_X - Lambda_X' G) Delta^-T Theta_XT

with Delta = Theta_XX - G Theta_X'X and Lambda_S = kappa_XS - G kappa_X'S,
where G is the diagonal matrix of per-transition discounts (a plain scalar
discount in the continuing case; transitions into absorbing states carry a
zero entry, which removes their bootstrap term exactly).

Everything here consumes kernel blocks over the three named point sets
``test``, ``train``, ``next`` as produced by :func:`uvu_lab.kernels.
kernel_blocks` or by a linear feature model, so the same code path serves
both the analytic infinite-width kernels and exact finite-dimensional
feature models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelPair


class NonPositiveDefiniteDelta(Exception):
    """The TD operator matrix is not positive definite; training would diverge.

    Carries the stability diagnostic so callers can report the Gershgorin
    bound and minimum eigenvalue alongside the failure.
    """

    def __init__(self, report: "StabilityReport"):
        self.report = report
        super().__init__(
            "TD operator matrix is not positive definite "
            f"(min symmetric-part eigenvalue {report.min_eigenvalue:.3e}, "
            f"Gershgorin lower bound {report.gershgorin_lower_bound:.3e}); "
            "gradient-flow TD training on this problem is unstable"
        )


@dataclass
class StabilityReport:
    min_eigenvalue: float  # smallest eigenvalue of the symmetric part
    gershgorin_lower_bound: float  # min_i (a_ii - sum_{j != i} |a_ij|)
    is_pd: bool


def stability_check(theta_xx: np.ndarray, theta_xpx: np.ndarray, gamma) -> StabilityReport:
    """Diagnose positive definiteness of Theta_XX - G Theta_X'X."""
    delta = _delta_matrix(theta_xx, theta_xpx, gamma)
    sym = 0.5 * (delta + delta.T)
    min_eig = float(np.linalg.eigvalsh(sym)[0])
    diag = np.diag(delta)
    radii = np.abs(delta).sum(axis=1) - np.abs(diag)
    gersh = float((diag - radii).min())
    return StabilityReport(min_eig, gersh, min_eig > 0.0)


def _gamma_vector(gamma, n: int) -> np.ndarray:
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim == 0:
        return np.full(n, float(g))
    if g.shape != (n,):
        raise ValueError(f"per-transition discount must have shape ({n},)")
    return g


def _delta_matrix(theta_xx, theta_xpx, gamma) -> np.ndarray:
    g = _gamma_vector(gamma, theta_xx.shape[0])
    return theta_xx - g[:, None] * theta_xpx


@dataclass
class TdOperatorMatrices:
    """Delta / Lambda intermediates of the closed-form TD posterior."""

    delta: np.ndarray
    delta_inv: np.ndarray
    lambda_train: np.ndarray  # kappa_XX   - G kappa_X'X
    lambda_next: np.ndarray  # kappa_XX'  - G kappa_X'X'
    lambda_test: np.ndarray  # kappa_XT   - G kappa_X'T
    gamma: np.ndarray


@dataclass
class TdGaussian:
    """Converged-prediction Gaussian over a set of test points."""

    mean: np.ndarray
    cov: np.ndarray

    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def _require(kernels: dict, a: str, b: str) -> KernelPair:
    try:
        return kernels[(a, b)]
    except KeyError:
        raise KeyError(f"kernel block ({a!r}, {b!r}) missing") from None


def td_operator_matrices(kernels: dict, gamma, *, jitter: bool = False, check: bool = True) -> TdOperatorMatrices:
    """Assemble Delta and Lambda blocks; optionally gate on positive definiteness."""
    k_xx = _require(kernels, "train", "train")
    k_xpx = _require(kernels, "next", "train")
    k_xxp = _require(kernels, "train", "next")
    k_xpxp = _require(kernels, "next", "next")
    k_xt = _require(kernels, "train", "test")
    k_xpt = _require(kernels, "next", "test")
    n = k_xx.theta.shape[0]
    g = _gamma_vector(gamma, n)
    delta = k_xx.theta - g[:, None] * k_xpx.theta
    if check:
        report = stability_check(k_xx.theta, k_xpx.theta, g)
        if not report.is_pd:
            if not jitter:
                raise NonPositiveDefiniteDelta(report)
            delta = delta + (1e-8 * np.trace(delta) / n) * np.eye(n)
    delta_inv = np.linalg.inv(delta)
    lam_train = k_xx.kappa - g[:, None] * k_xpx.kappa
    lam_next = k_xxp.kappa - g[:, None] * k_xpxp.kappa
    lam_test = k_xt.kappa - g[:, None] * k_xpt.kappa
    return TdOperatorMatrices(delta, delta_inv, lam_train, lam_next, lam_test, g)


def td_posterior(kernels: dict, gamma, rewards: np.ndarray, *, jitter: bool = False) -> TdGaussian:
    """Mean and covariance of converged TD predictions at the test points."""
    ops = td_operator_matrices(kernels, gamma, jitter=jitter)
    theta_tx = _require(kernels, "test", "train").theta
    kappa_tt = _require(kernels, "test", "test").kappa
    rewards = np.asarray(rewards, dtype=np.float64)
    b = theta_tx @ ops.delta_inv  # Theta_TX Delta^-1
    mean = b @ rewards
    cross = b @ ops.lambda_test
    middle = ops.lambda_train - ops.lambda_next * ops.gamma[None, :]
    cov = kappa_tt - (cross + cross.T) + b @ middle @ b.T
    return TdGaussian(mean=mean, cov=cov)


def supervised_posterior(kernels: dict, rewards: np.ndarray) -> TdGaussian:
    """Converged-prediction Gaussian for plain squared-loss regression.

    Independent implementation of the no-bootstrap case (the classic
    kernel-regression posterior); used as the reduction target for the TD
    posterior at discount zero.
    """
    theta_tx = _require(kernels, "test", "train").theta
    theta_xx = _require(kernels, "train", "train").theta
    kappa_tt = _require(kernels, "test", "test").kappa
    kappa_xt = _require(kernels, "train", "test").kappa
    kappa_xx = _require(kernels, "train", "train").kappa
    rewards = np.asarray(rewards, dtype=np.float64)
    w = np.linalg.solve(theta_xx, kappa_xt)
    v = np.linalg.solve(theta_xx, rewards)
    mean = theta_tx @ v
    cross = theta_tx @ w
    inner = np.linalg.solve(theta_xx, kappa_xx @ np.linalg.solve(theta_xx, theta_tx.T))
    cov = kappa_tt - (cross + cross.T) + theta_tx @ inner
    return TdGaussian(mean=mean, cov=cov)


def post_convergence_function(kernels: dict, gamma, rewards: np.ndarray, f0_test: np.ndarray, f0_train: np.ndarray, f0_next: np.ndarray, *, jitter: bool = False) -> np.ndarray:
    """Converged predictions at the test points for one given initialization.

    f_inf(x) = f_0(x) - Theta_xX Delta^-1 (f_0(X) - (G f_0(X') + r)).
    """
    ops = td_operator_matrices(kernels, gamma, jitter=jitter)
    theta_tx = _require(kernels, "test", "train").theta
    resid0 = np.asarray(f0_train, dtype=np.float64) - (
        ops.gamma * np.asarray(f0_next, dtype=np.float64) + np.asarray(rewards, dtype=np.float64)
    )
    return np.asarray(f0_test, dtype=np.float64) - theta_tx @ (ops.delta_inv @ resid0)


@dataclass
class BlockAffinePosterior:
    """Joint Gaussian of converged values over [test | train | next].

    ``a`` and ``b`` define the affine map f_inf = a f_0 + b applied to the
    jointly Gaussian initial values; ``cov = a K a^T`` with K the stacked
    NNGP matrix.  The test/test block of ``cov`` must reproduce the direct
    closed-form covariance, which is asserted by the verification suite.
    """

    a: np.ndarray
    b: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    n_test: int

    def test_block(self) -> TdGaussian:
        t = self.n_test
        return TdGaussian(mean=self.mean[:t].copy(), cov=self.cov[:t, :t].copy())


def block_affine_posterior(kernels: dict, gamma, rewards: np.ndarray, *, jitter: bool = False) -> BlockAffinePosterior:
    """Explicit affine-map construction of the joint converged Gaussian."""
    ops = td_operator_matrices(kernels, gamma, jitter=jitter)
    theta_tx = _require(kernels, "test", "train").theta
    theta_xx = _require(kernels, "train", "train").theta
    theta_xpx = _require(kernels, "next", "train").theta
    rewards = np.asarray(rewards, dtype=np.float64)
    n_t, n_d = theta_tx.shape
    g = ops.gamma

    b_t = theta_tx @ ops.delta_inv
    b_x = theta_xx @ ops.delta_inv
    b_xp = theta_xpx @ ops.delta_inv

    eye_t = np.eye(n_t)
    eye_d = np.eye(n_d)
    # each row group i satisfies f_inf = f_0 - B_i (f_0(X) - G f_0(X') - r)
    a = np.block(
        [
            [eye_t, -b_t, b_t * g[None, :]],
            [np.zeros((n_d, n_t)), eye_d - b_x, b_x * g[None, :]],
            [np.zeros((n_d, n_t)), -b_xp, eye_d + b_xp * g[None, :]],
        ]
    )
    b_vec = np.concatenate([b_t @ rewards, b_x @ rewards, b_xp @ rewards])

    names = ["test", "train", "next"]
    k = np.block([[_require(kernels, ni, nj).kappa for nj in names] for ni in names])
    cov = a @ k @ a.T
    return BlockAffinePosterior(a=a, b=b_vec, mean=b_vec.copy(), cov=cov, n_test=n_t)


@dataclass
class UvuErrorLaw:
    """Distribution of squared prediction errors implied by a TD Gaussian.

    Per test point, half the squared error of a converged online/target pair
    has expectation ``sigma_q2`` (the converged-value variance), and the
    M-head sample mean of half squared errors follows a scaled chi-squared
    law with M degrees of freedom and scale ``sigma_q2 / M``.
    """

    sigma_q2: np.ndarray

    def expected_half_sq_error(self) -> np.ndarray:
        return self.sigma_q2.copy()

    def head_mean_distribution(self, point: int, n_heads: int):
        """Frozen scipy distribution of the M-head mean of half squared errors."""
        from scipy import stats

        s2 = float(self.sigma_q2[point])
        if s2 <= 0.0:
            raise ValueError("degenerate law: converged-value variance is zero")
        return stats.chi2(df=n_heads, scale=s2 / n_heads)


def uvu_error_law(td_gaussian: TdGaussian) -> UvuErrorLaw:
    """Error law of an online/target pair trained on target-generated rewards."""
    return UvuErrorLaw(sigma_q2=td_gaussian.variances())
