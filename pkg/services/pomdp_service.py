"""
Reward, transition and belief-update maps of the single-ADR POMDP.
"""
from typing import Tuple

import numpy as np

from core.exceptions import ImpossibleObservationError, ModelValidationError
from models.models import Action, AdrModel, AdrState, LikelihoodPair


def check_belief(b: float) -> float:
    if not 0.0 <= b <= 1.0:
        raise ModelValidationError(f"belief {b} outside [0, 1]")
    return float(b)


def reward(model: AdrModel, a: Action, b: float) -> float:
    """Expected profit r_a(b): lambda*b when idle, lambda - c when a crew is sent."""
    b = check_belief(b)
    if Action(a) == Action.DoNothing:
        return model.lam * b - model.theta
    return model.lam - model.c - model.theta


def reward_matrix(model: AdrModel) -> np.ndarray:
    """R[a, s] for a in (DoNothing, SendCrew), s in (Broken, Working)."""
    return np.array(
        [
            [-model.theta, model.lam - model.theta],
            [model.lam - model.theta - model.c, model.lam - model.theta - model.c],
        ]
    )


def transition_row(model: AdrModel, a: Action, s: AdrState) -> Tuple[float, float]:
    """(P(next Broken), P(next Working)) given action and current state."""
    if Action(a) == Action.SendCrew or AdrState(s) == AdrState.Working:
        return (model.p, 1.0 - model.p)
    return (1.0, 0.0)


def belief_update(model: AdrModel, a: Action, b: float, lik: LikelihoodPair) -> float:
    """Bayes map Gamma_{a,x}(b), evaluated in log space."""
    b = check_belief(b)
    if Action(a) == Action.SendCrew:
        return 1.0 - model.p
    return float(belief_update_batch(model, b, np.array([lik.log_q0]), np.array([lik.log_q1]))[0])


def belief_update_batch(model: AdrModel, b, log_q0: np.ndarray, log_q1: np.ndarray) -> np.ndarray:
    """
    Passive-action belief map for many observations at once.

    Only log_q1 - log_q0 enters the result, so a common factor in both
    likelihoods cancels. b may be a scalar or an array broadcastable
    against the likelihoods.

    Raises:
        ImpossibleObservationError: if some observation has zero probability
            under the prior mixture (or a likelihood is NaN).
    """
    log_q0 = np.asarray(log_q0, dtype=float)
    log_q1 = np.asarray(log_q1, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(np.isnan(log_q0)) or np.any(np.isnan(log_q1)):
        raise ImpossibleObservationError("likelihood is NaN")

    with np.errstate(divide="ignore", invalid="ignore"):
        log_working = np.log(b) + log_q1
        log_broken = np.log1p(-b) + log_q0
        log_den = np.logaddexp(log_working, log_broken)
    if np.any(np.isneginf(log_den)) or np.any(np.isnan(log_den)):
        raise ImpossibleObservationError()

    with np.errstate(invalid="ignore"):
        posterior = np.exp(log_working - log_den)
    # +inf likelihoods under the working branch only
    posterior = np.where(np.isnan(posterior), 1.0, posterior)
    return (1.0 - model.p) * np.clip(posterior, 0.0, 1.0)
