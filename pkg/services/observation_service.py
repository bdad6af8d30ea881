"""
Gaussian meter-reading model: inverse normal CDF, Sobol point streams,
reading samplers and the broken/working log-likelihoods.
"""
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import erfc
from scipy.stats import qmc

from core.exceptions import DimensionMismatchError, MissingPosteriorError, ModelValidationError
from models.models import LikelihoodPair, ObsScenario, VbPosterior, VbPosteriorBatch

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Rational approximation coefficients (Acklam) for the normal quantile
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _lower_half_ppf(u: np.ndarray) -> np.ndarray:
    """Quantile for 0 < u <= 0.5, refined by one Halley step."""
    x = np.empty_like(u)

    tail = u < _P_LOW
    if np.any(tail):
        q = np.sqrt(-2.0 * np.log(u[tail]))
        x[tail] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)

    central = ~tail
    if np.any(central):
        q = u[central] - 0.5
        r = q * q
        x[central] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)

    # Halley step against the complementary error function
    e = 0.5 * erfc(-x / math.sqrt(2.0)) - u
    t = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
    return x - t / (1.0 + 0.5 * x * t)


def inv_norm_cdf(u):
    """
    Standard normal quantile Phi^{-1}(u) for u in the open interval (0, 1).

    Accepts scalars or arrays. The upper half is obtained by symmetry so the
    refinement always works on the well-conditioned lower tail.

    Raises:
        ModelValidationError: if any u lies outside (0, 1).
    """
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ModelValidationError("inv_norm_cdf requires 0 < u < 1")
    upper = arr > 0.5
    lower_arg = np.where(upper, 1.0 - arr, arr)
    x = _lower_half_ppf(np.atleast_1d(lower_arg)).reshape(arr.shape)
    x = np.where(upper, -x, x)
    return float(x) if np.ndim(x) == 0 else x


def normal_log_pdf(z):
    """log phi(z)."""
    return -0.5 * np.square(z) - LOG_SQRT_2PI


def snr_to_sigma(nu0: float, snr_db: float) -> float:
    return nu0 * 10.0 ** (-snr_db / 20.0)


def sigma_to_snr(nu0: float, sigma: float) -> float:
    return 20.0 * math.log10(nu0 / sigma)


class QmcStream:
    """
    Unscrambled Sobol points in (0, 1)^dimension.

    The all-zero first point is skipped. A stream started at index i emits the
    same points as a fresh stream that skipped i points, so row and run
    sub-streams are derived by index offset. Not thread-safe.
    """

    def __init__(self, dimension: int, start: int = 0):
        if dimension < 1:
            raise ModelValidationError("QMC dimension must be positive")
        self.dimension = dimension
        self.start = start
        self.index = start
        self._engine = qmc.Sobol(d=dimension, scramble=False)
        self._engine.fast_forward(1 + start)

    def take(self, count: int) -> np.ndarray:
        """Next count points, shape (count, dimension)."""
        with warnings.catch_warnings():
            # balance warning for non power-of-two batch sizes
            warnings.simplefilter("ignore", category=UserWarning)
            points = self._engine.random(count)
        self.index += count
        return points

    def skip(self, count: int) -> None:
        self._engine.fast_forward(count)
        self.index += count

    def substream(self, offset: int) -> "QmcStream":
        return QmcStream(self.dimension, start=self.start + offset)


@dataclass(frozen=True)
class ReadingSample:
    """Both mixture branches for each point, plus the branch selector."""

    broken: np.ndarray  # (N, L) readings of a broken ADR
    working: np.ndarray  # (N, L) readings of a working ADR
    selector: np.ndarray  # (N,) compared against b: working iff selector < b
    shed: np.ndarray  # (N,) load-shed r used by the working branch
    shift: np.ndarray  # (N,) clock offset delta used by the working branch


def _split_point(scn: ObsScenario, points: np.ndarray):
    if points.shape[1] != scn.point_dimension:
        raise DimensionMismatchError(scn.point_dimension, points.shape[1], what="QMC point")
    length = scn.reading_length
    z = inv_norm_cdf(points[:, :length])
    selector = points[:, length]
    col = length + 1
    if scn.deterministic_shed:
        shed = np.full(len(points), scn.nu0)
    else:
        shed = scn.nu0 + inv_norm_cdf(points[:, col]) / math.sqrt(scn.eta0)
        col += 1
    if scn.case.mismatched:
        slot = np.minimum(np.floor(points[:, col] * (2 * scn.d + 1)), 2 * scn.d).astype(np.int64)
        shift = slot - scn.d
    else:
        shift = np.zeros(len(points), dtype=np.int64)
    return z, selector, shed, shift


def sample_components(scn: ObsScenario, points: np.ndarray) -> ReadingSample:
    """Broken and working readings for every point (common random numbers across beliefs)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    z, selector, shed, shift = _split_point(scn, points)
    y = scn.baseline
    broken = y + scn.sigma * z
    windows = scn.window_mask()[shift + scn.d]
    working = broken - shed[:, None] * windows
    return ReadingSample(broken=broken, working=working, selector=selector, shed=shed, shift=shift)


def sample_reading_batch(scn: ObsScenario, b: float, points: np.ndarray) -> np.ndarray:
    """Readings drawn from the belief-b mixture, one row per point."""
    sample = sample_components(scn, points)
    working = sample.selector < b
    return np.where(working[:, None], sample.working, sample.broken)


def sample_reading(scn: ObsScenario, b: float, point) -> np.ndarray:
    """One reading vector from the belief-b mixture for a single unit-hypercube point."""
    point = np.asarray(point, dtype=float)
    if point.ndim != 1:
        raise DimensionMismatchError(scn.point_dimension, point.size, what="QMC point")
    return sample_reading_batch(scn, b, point[None, :])[0]


def broken_log_likelihood(scn: ObsScenario, x: np.ndarray, sigma=None) -> np.ndarray:
    """
    Row-wise log Q0 for a reading matrix.

    sigma overrides the scenario noise per row (fleets with mixed SNR).
    """
    x = np.atleast_2d(x)
    if x.shape[1] != scn.reading_length:
        raise DimensionMismatchError(scn.reading_length, x.shape[1], what="reading")
    sig = scn.sigma if sigma is None else np.asarray(sigma, dtype=float)
    sig_col = np.reshape(sig, (-1, 1)) if np.ndim(sig) else sig
    z = (x - scn.baseline) / sig_col
    return normal_log_pdf(z).sum(axis=1) - scn.reading_length * np.log(sig)


def likelihood_batch(
    scn: ObsScenario,
    x: np.ndarray,
    posterior: Optional[VbPosteriorBatch] = None,
    sigma=None,
    eta0=None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    (log Q0, log Q1) for every row of x.

    Case A uses the closed-form shifted product. For cases B-D the posterior
    is fitted here when not supplied.
    """
    from services.variational_service import fit_posterior_batch, q1_quadrature_batch

    x = np.atleast_2d(np.asarray(x, dtype=float))
    log_q0 = broken_log_likelihood(scn, x, sigma=sigma)
    if scn.case.value == "A":
        sig = scn.sigma if sigma is None else np.asarray(sigma, dtype=float)
        sig_col = np.reshape(sig, (-1, 1)) if np.ndim(sig) else sig
        z = (x - scn.baseline + scn.nu0) / sig_col
        log_q1 = normal_log_pdf(z).sum(axis=1) - scn.reading_length * np.log(sig)
        return log_q0, log_q1

    if posterior is None:
        posterior = fit_posterior_batch(scn, x, sigma=sigma, eta0=eta0)
    log_q1 = q1_quadrature_batch(scn, x, posterior, sigma=sigma, log_q0=log_q0)
    return log_q0, log_q1


def likelihood(scn: ObsScenario, x, posterior: Optional[VbPosterior] = None) -> LikelihoodPair:
    """
    Log-likelihood pair of one reading vector.

    Raises:
        MissingPosteriorError: for cases B, C, D without a posterior.
    """
    from services.variational_service import q1_quadrature

    x = np.asarray(x, dtype=float)
    if scn.case.value == "A":
        log_q0, log_q1 = likelihood_batch(scn, x[None, :])
        return LikelihoodPair(log_q0=float(log_q0[0]), log_q1=float(log_q1[0]))
    if posterior is None:
        raise MissingPosteriorError(scn.case.value)
    log_q0 = float(broken_log_likelihood(scn, x[None, :])[0])
    return LikelihoodPair(log_q0=log_q0, log_q1=q1_quadrature(scn, x, posterior))
