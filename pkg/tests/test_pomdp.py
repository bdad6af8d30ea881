"""
Test script for the single-ADR reward, transition and belief maps.
"""
import sys
import os

import numpy as np
import pytest

# Add the parent directory to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.exceptions import ImpossibleObservationError, ModelValidationError
from models.models import Action, AdrModel, AdrState, LikelihoodPair
from services.pomdp_service import (
    belief_update,
    belief_update_batch,
    reward,
    reward_matrix,
    transition_row,
)

MODEL = AdrModel()


def test_rewards():
    print("💰 Testing rewards...")
    assert reward(MODEL, Action.DoNothing, 0.5) == pytest.approx(0.5)
    assert reward(MODEL, Action.DoNothing, 0.0) == 0.0
    assert reward(MODEL, Action.SendCrew, 0.3) == pytest.approx(-2.0)
    shifted = AdrModel(theta=0.25)
    assert reward(shifted, Action.DoNothing, 1.0) == pytest.approx(0.75)
    assert reward(shifted, Action.SendCrew, 1.0) == pytest.approx(-2.25)
    assert np.allclose(reward_matrix(MODEL), [[0.0, 1.0], [-2.0, -2.0]])
    with pytest.raises(ModelValidationError):
        reward(MODEL, Action.DoNothing, 1.2)


def test_transitions():
    print("🔁 Testing transitions...")
    assert transition_row(MODEL, Action.DoNothing, AdrState.Broken) == (1.0, 0.0)
    assert transition_row(MODEL, Action.DoNothing, AdrState.Working) == pytest.approx((0.05, 0.95))
    assert transition_row(MODEL, Action.SendCrew, AdrState.Broken) == pytest.approx((0.05, 0.95))


def test_belief_update_send_crew():
    lik = LikelihoodPair(log_q0=-3.0, log_q1=-1.0)
    assert belief_update(MODEL, Action.SendCrew, 0.1, lik) == pytest.approx(0.95)


def test_belief_update_uninformative_reading():
    beliefs = np.linspace(0.0, 1.0, 11)
    out = belief_update_batch(MODEL, beliefs, np.full(11, -2.0), np.full(11, -2.0))
    assert np.allclose(out, 0.95 * beliefs)


def test_belief_update_extreme_ratio():
    print("🧮 Testing log-space belief update...")
    # likelihood ratio e^800 overflows outside log space
    out = belief_update_batch(MODEL, 0.5, np.array([-900.0]), np.array([-100.0]))
    assert out[0] == pytest.approx(0.95)
    out = belief_update_batch(MODEL, 0.5, np.array([-100.0]), np.array([-900.0]))
    assert out[0] == pytest.approx(0.0, abs=1e-300)


def test_belief_update_matches_bayes():
    b, q0, q1 = 0.3, 0.2, 0.6
    expected = 0.95 * b * q1 / (b * q1 + (1 - b) * q0)
    lik = LikelihoodPair(log_q0=np.log(q0), log_q1=np.log(q1))
    assert belief_update(MODEL, Action.DoNothing, b, lik) == pytest.approx(expected)
    assert lik.log_ratio == pytest.approx(np.log(3.0))


def test_impossible_observation():
    with pytest.raises(ImpossibleObservationError):
        belief_update_batch(MODEL, 0.5, np.array([-np.inf]), np.array([-np.inf]))
    with pytest.raises(ImpossibleObservationError):
        # broken reading at belief 1 has zero prior mass
        belief_update_batch(MODEL, 1.0, np.array([0.0]), np.array([-np.inf]))


def test_model_validation():
    with pytest.raises(ValueError):
        AdrModel(p=0.0)
    with pytest.raises(ValueError):
        AdrModel(beta=1.0)
    assert AdrModel(**{"lambda": 2.0}).lam == 2.0


if __name__ == "__main__":
    test_rewards()
    test_transitions()
    test_belief_update_send_crew()
    test_belief_update_uninformative_reading()
    test_belief_update_extreme_ratio()
    test_belief_update_matches_bayes()
    test_impossible_observation()
    test_model_validation()
    print("\n🎉 POMDP map tests completed!")
