import numpy as np
import pytest

import diffguide as dg

TINY_REWARDS = np.array([0.1, 0.4, 0.9, 0.2])  # code order AA, BA, AB, BB


def make_tiny(T: int = 8):
    """K=2, L=2 masked instance with product-form data (induced law == table)."""
    sched = dg.make_schedule("linear", T)
    p1, p2 = 0.3, 0.4  # P(first=B), P(second=B)
    seqs = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
    probs = np.array([(1 - p1) * (1 - p2), p1 * (1 - p2),
                      (1 - p1) * p2, p1 * p2])
    data = dg.DistributionTable(support=seqs, probs=probs)
    model = dg.MaskedProcess(data, K=2, schedule=sched)
    reward = dg.TableReward(TINY_REWARDS, K=2, L=2)
    return model, reward


def make_k2l1(T: int = 6):
    """K=2, L=1 instance from the worked value examples: p = [0.75, 0.25], r = [0, 1]."""
    sched = dg.make_schedule("linear", T)
    data = dg.DistributionTable(support=np.array([[0], [1]]),
                                probs=np.array([0.75, 0.25]))
    model = dg.MaskedProcess(data, K=2, schedule=sched)
    reward = dg.TableReward(np.array([0.0, 1.0]), K=2, L=1)
    return model, reward


@pytest.fixture(scope="session")
def tiny():
    model, reward = make_tiny()
    values = dg.ExactDiscreteValues(model, reward, 1.0)
    oracle = dg.brute_force_target(model.induced_law(), reward, 1.0)
    return model, reward, values, oracle


@pytest.fixture(scope="session")
def k2l1():
    model, reward = make_k2l1()
    values = dg.ExactDiscreteValues(model, reward, 1.0)
    return model, reward, values


def empirical_tv(oracle, states, weights=None):
    emp = dg.empirical_table(oracle.table.support, states, weights)
    return dg.tv_distance(emp, oracle.table)
