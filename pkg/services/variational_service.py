"""
Mean-field posterior over load-shed r and clock offset delta, and the
posterior-averaged working-ADR likelihood built from it.

For a reading x the window sums S_delta = 1_delta^T (y - x) carry all the
information the updates need, since ||1_delta||^2 = m for every delta:

    log p(x | r, delta) = log Q0(x) + r S_delta / sigma^2 - m r^2 / (2 sigma^2)
"""
import math
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import trapezoid
from scipy.special import logsumexp
from scipy.stats import norm

from core.config import settings
from core.exceptions import DimensionMismatchError, NumericalError
from core.logging import inference_logger
from models.models import ObsScenario, QuadratureRule, VbPosterior, VbPosteriorBatch
from services.observation_service import broken_log_likelihood


def _per_row(value, rows: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (rows,)).astype(float)


def window_sums(scn: ObsScenario, x: np.ndarray) -> np.ndarray:
    """S[j, delta + d] = 1_delta^T (y - x_j)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != scn.reading_length:
        raise DimensionMismatchError(scn.reading_length, x.shape[1], what="reading")
    return (scn.baseline - x) @ scn.window_mask().T.astype(float)


def delta_log_weights(
    scn: ObsScenario, sums: np.ndarray, nu, eta, sigma, simplified: bool = True
) -> np.ndarray:
    """
    Normalized log Delta(delta) per row.

    The full exponent carries -(nu^2 + 1/eta) m / (2 sigma^2), identical for
    every delta; simplified=True drops it before normalizing.
    """
    sig2 = np.square(sigma)
    logits = (nu / sig2)[:, None] * sums
    if not simplified:
        with np.errstate(divide="ignore"):
            inv_eta = np.where(np.isinf(eta), 0.0, 1.0 / eta)
        logits = logits - ((np.square(nu) + inv_eta) * scn.m / (2.0 * sig2))[:, None]
    return logits - logsumexp(logits, axis=1, keepdims=True)


def fit_posterior_batch(
    scn: ObsScenario,
    x: np.ndarray,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    sigma=None,
    eta0=None,
) -> VbPosteriorBatch:
    """
    Coordinate-ascent fit of Delta(delta) g(r) for every row of x.

    Starts from nu = nu0 and uniform Delta. Rows stop updating once the
    relative change in nu and the total-variation change in Delta both fall
    below tol. For deterministic shed only Delta is fitted and eta = +inf.

    Raises:
        NumericalError: if an update produces a non-finite value.
    """
    tol = settings.vb_tolerance if tol is None else tol
    max_iter = settings.vb_max_iterations if max_iter is None else max_iter

    sums = window_sums(scn, x)
    rows, width = sums.shape
    sig = _per_row(scn.sigma if sigma is None else sigma, rows)
    sig2 = np.square(sig)

    if scn.deterministic_shed:
        nu = np.full(rows, scn.nu0)
        eta = np.full(rows, math.inf)
        log_delta = delta_log_weights(scn, sums, nu, eta, sig)
        if not np.all(np.isfinite(log_delta) | np.isneginf(log_delta)):
            raise NumericalError("non-finite clock-offset weights")
        return VbPosteriorBatch(
            delta_probs=np.exp(log_delta),
            nu=nu,
            eta=eta,
            iterations=np.ones(rows, dtype=np.int64),
            converged=np.ones(rows, dtype=bool),
        )

    prior_eta = _per_row(scn.eta0 if eta0 is None else eta0, rows)
    eta = prior_eta + scn.m / sig2
    nu = np.full(rows, scn.nu0, dtype=float)
    delta = np.full((rows, width), 1.0 / width)
    iterations = np.zeros(rows, dtype=np.int64)
    converged = np.zeros(rows, dtype=bool)

    for _ in range(max_iter):
        active = ~converged
        if not np.any(active):
            break
        a_sums = sums[active]
        log_delta = delta_log_weights(scn, a_sums, nu[active], eta[active], sig[active])
        new_delta = np.exp(log_delta)
        new_nu = (scn.nu0 * prior_eta[active] + (new_delta * a_sums).sum(axis=1) / sig2[active]) / eta[active]
        if not (np.all(np.isfinite(new_nu)) and np.all(np.isfinite(new_delta))):
            raise NumericalError("non-finite variational update")

        nu_change = np.abs(new_nu - nu[active]) / np.maximum(np.abs(new_nu), 1e-12)
        tv_change = 0.5 * np.abs(new_delta - delta[active]).sum(axis=1)
        nu[active] = new_nu
        delta[active] = new_delta
        iterations[active] += 1
        converged[active] = (nu_change < tol) & (tv_change < tol)

    if not np.all(converged):
        inference_logger.warning(
            "Variational fit hit iteration cap",
            rows=int((~converged).sum()),
            max_iter=max_iter,
        )
    return VbPosteriorBatch(delta_probs=delta, nu=nu, eta=eta, iterations=iterations, converged=converged)


def fit_posterior(
    scn: ObsScenario, x, tol: Optional[float] = None, max_iter: Optional[int] = None
) -> VbPosterior:
    """Variational posterior for a single reading vector."""
    x = np.asarray(x, dtype=float)
    return fit_posterior_batch(scn, x[None, :], tol=tol, max_iter=max_iter).row(0)


def quadrature_nodes(half_width: int, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
    """Standardized nodes t_l and log-weights (summing to one) for 2L+1 points."""
    if half_width < 0:
        raise ValueError("quadrature half width must be non-negative")
    if rule == QuadratureRule.gauss_hermite:
        nodes, weights = hermegauss(2 * half_width + 1)
        return nodes, np.log(weights / weights.sum())
    nodes = np.arange(-half_width, half_width + 1, dtype=float)
    # rectangle rule: width * g(r_l), renormalized
    log_w = norm.logpdf(nodes)
    return nodes, log_w - logsumexp(log_w)


def q1_quadrature_batch(
    scn: ObsScenario,
    x: np.ndarray,
    post: VbPosteriorBatch,
    half_width: Optional[int] = None,
    rule: QuadratureRule = QuadratureRule.rectangle,
    sigma=None,
    log_q0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Row-wise log Q1 averaged over the posterior shifts and shed quadrature nodes."""
    half_width = settings.quadrature_half_width if half_width is None else half_width
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sums = window_sums(scn, x)
    rows = sums.shape[0]
    sig2 = np.square(_per_row(scn.sigma if sigma is None else sigma, rows))
    if log_q0 is None:
        log_q0 = broken_log_likelihood(scn, x, sigma=sigma)

    nodes, log_w = quadrature_nodes(half_width, rule)
    with np.errstate(divide="ignore"):
        sd = np.where(np.isinf(post.eta), 0.0, 1.0 / np.sqrt(post.eta))
        log_delta = np.log(post.delta_probs)
    shed = post.nu[:, None] + sd[:, None] * nodes[None, :]  # (rows, R)

    terms = (
        shed[:, None, :] * sums[:, :, None] / sig2[:, None, None]
        - scn.m * np.square(shed)[:, None, :] / (2.0 * sig2[:, None, None])
        + log_delta[:, :, None]
        + log_w[None, None, :]
    )
    return log_q0 + logsumexp(terms.reshape(rows, -1), axis=1)


def q1_quadrature(
    scn: ObsScenario,
    x,
    post: VbPosterior,
    half_width: Optional[int] = None,
    rule: QuadratureRule = QuadratureRule.rectangle,
) -> float:
    """log Q1 of one reading under its posterior."""
    batch = VbPosteriorBatch(
        delta_probs=np.asarray(post.delta_probs, dtype=float)[None, :],
        nu=np.array([post.nu]),
        eta=np.array([post.eta]),
        iterations=np.array([post.iterations]),
        converged=np.array([post.converged]),
    )
    x = np.asarray(x, dtype=float)
    return float(q1_quadrature_batch(scn, x[None, :], batch, half_width=half_width, rule=rule)[0])


def _shed_grid(scn: ObsScenario, grid_points: int, width_sd: float = 6.0) -> Tuple[np.ndarray, np.ndarray]:
    sd = 1.0 / math.sqrt(scn.eta0)
    r = np.linspace(scn.nu0 - width_sd * sd, scn.nu0 + width_sd * sd, grid_points)
    return r, norm.logpdf(r, loc=scn.nu0, scale=sd)


def exact_log_joint(scn: ObsScenario, x, grid_points: int = 2001) -> Tuple[np.ndarray, np.ndarray]:
    """
    log [p(x | r, delta) rho(r, delta)] on a shed grid, shape (2d+1, grid_points),
    together with the grid. Deterministic shed uses the single point r = nu0.
    """
    x = np.asarray(x, dtype=float)
    sums = window_sums(scn, x[None, :])[0]
    log_q0 = float(broken_log_likelihood(scn, x[None, :])[0])
    width = len(sums)
    if scn.deterministic_shed:
        r = np.array([scn.nu0])
        log_prior = np.zeros(1)
    else:
        r, log_prior = _shed_grid(scn, grid_points)
    sig2 = scn.sigma ** 2
    log_lik = log_q0 + r[None, :] * sums[:, None] / sig2 - scn.m * np.square(r)[None, :] / (2.0 * sig2)
    return log_lik + log_prior[None, :] - math.log(width), r


def exact_log_q1(scn: ObsScenario, x, grid_points: int = 10001) -> float:
    """Prior-marginal log Q1 by trapezoid integration over r and enumeration over delta."""
    log_joint, r = exact_log_joint(scn, x, grid_points)
    if scn.deterministic_shed:
        return float(logsumexp(log_joint))
    peak = log_joint.max()
    density = np.exp(log_joint - peak).sum(axis=0)
    return float(peak + math.log(trapezoid(density, r)))


def exact_posterior(scn: ObsScenario, x, grid_points: int = 2001) -> Tuple[np.ndarray, float]:
    """Exact posterior over delta and posterior mean of r by grid enumeration."""
    log_joint, r = exact_log_joint(scn, x, grid_points)
    weights = np.exp(log_joint - log_joint.max())
    weights /= weights.sum()
    return weights.sum(axis=1), float((weights.sum(axis=0) * r).sum())
