import numpy as np
import pytest

import diffguide as dg
from conftest import make_k2l1

MASKED1 = np.array([2])                      # fully masked K=2, L=1 state
V_MASKED_EXACT = float(np.log(0.75 + 0.25 * np.e))   # alpha log E[exp(r)], r in {0,1}


def test_exact_value_t0_is_reward(k2l1):
    model, reward, _ = k2l1
    assert dg.exact_value_discrete(model, reward, 1.0, 0, np.array([1])) == 1.0
    assert dg.exact_value_discrete(model, reward, 1.0, 0, np.array([0])) == 0.0


def test_exact_value_fully_masked_worked_example(k2l1):
    model, reward, values = k2l1
    v = dg.exact_value_discrete(model, reward, 1.0, model.T, MASKED1)
    assert v == pytest.approx(V_MASKED_EXACT, abs=1e-12)
    assert values.at_one(model.T, MASKED1) == pytest.approx(V_MASKED_EXACT, abs=1e-12)


def test_exact_value_constant_reward():
    model, _ = make_k2l1()
    const = dg.constant_table_reward(1.7, K=2, L=1)
    values = dg.ExactDiscreteValues(model, const, 1.0)
    for t in range(model.T + 1):
        for code in range(model.n_codes):
            assert values.at_codes(t, np.array([code]))[0] == pytest.approx(1.7, abs=1e-12)


def test_exact_value_rejects_nonpositive_alpha(k2l1):
    model, reward, _ = k2l1
    with pytest.raises(ValueError):
        dg.exact_value_discrete(model, reward, 0.0, 1, MASKED1)
    with pytest.raises(ValueError):
        dg.ExactDiscreteValues(model, reward, -1.0)


def test_soft_bellman_residual(tiny):
    model, _, values, _ = tiny
    res = dg.soft_bellman_residuals(model, values)
    assert res.max() < 1e-10


def test_recursion_recovers_direct_computation(tiny):
    # Bellman table vs direct terminal-law evaluation at every (t, state)
    model, reward, values, _ = tiny
    for t in (1, 4, 8):
        for code in range(model.n_codes):
            x = model.decode(np.array(code))
            direct = dg.exact_value_discrete(model, reward, 1.0, t, x)
            assert values.at_one(t, x) == pytest.approx(direct, abs=1e-10)


def test_value_monotone_in_alpha(k2l1):
    model, reward, _ = k2l1
    alphas = [4.0, 2.0, 1.0, 0.5, 0.25]
    vs = [dg.exact_value_discrete(model, reward, a, model.T, MASKED1) for a in alphas]
    assert np.all(np.diff(vs) >= -1e-12)     # non-decreasing as alpha shrinks


def test_posterior_mean_jensen_direction(tiny):
    model, reward, values, _ = tiny
    pm = dg.PosteriorMeanValue(model, reward)
    for t in (2, 5, 8):
        for code in range(model.n_codes):
            x = model.decode(np.array(code))
            exact = values.at_one(t, x)
            if np.isfinite(exact):
                assert pm.at_one(t, x) <= exact + 1e-10


# ---------------------------------------------------------------------------
# Closed-form Gaussian value
# ---------------------------------------------------------------------------


def test_closed_form_zero_coefficient():
    assert dg.closed_form_gaussian_value(0.5, 0.2, 0.0, 1.0) == 0.0


def test_closed_form_large_alpha_limit():
    assert dg.closed_form_gaussian_value(0.5, 0.2, 1.0, 1e12) == pytest.approx(0.5, abs=1e-9)


def test_closed_form_worked_example():
    assert dg.closed_form_gaussian_value(0.5, 0.2, 1.0, 1.0) == pytest.approx(0.6)


def test_gaussian_linear_value_t0_is_reward():
    sched = dg.make_schedule("linear", 10)
    data = dg.GaussianMixtureData(weights=[1.0], means=[[0.0]], variances=[[1.0]])
    proc = dg.GaussianProcess(data, sched)
    gv = dg.GaussianLinearValue(proc, [2.0], alpha=1.0)
    assert gv.at_one(0, np.array([0.7])) == pytest.approx(1.4, abs=1e-12)


def test_gaussian_linear_value_matches_monte_carlo():
    # v_t(x) = a log E[exp(r(x0)/a) | x_t]; check by sampling the posterior
    sched = dg.make_schedule("linear", 10)
    data = dg.GaussianMixtureData(weights=[0.4, 0.6], means=[[1.0], [-0.8]],
                                  variances=[[0.3], [0.5]])
    proc = dg.GaussianProcess(data, sched)
    alpha, coef, t, x = 1.0, 0.7, 5, np.array([0.4])
    gv = dg.GaussianLinearValue(proc, [coef], alpha=alpha)
    rng = np.random.default_rng(0)
    from diffguide.processes import gaussian_posterior_moments
    resp, mean, var = gaussian_posterior_moments(x[None, :], t, data, proc.schedule)
    comp = rng.choice(2, size=400_000, p=resp[0])
    draws = mean[0, comp, 0] + np.sqrt(var[comp, 0]) * rng.standard_normal(400_000)
    mc = np.log(np.mean(np.exp(coef * draws / alpha))) * alpha
    assert gv.at_one(t, x) == pytest.approx(mc, abs=0.01)


def test_gaussian_linear_grad_modes_agree():
    sched = dg.make_schedule("linear", 10)
    data = dg.GaussianMixtureData(weights=[1.0], means=[[0.3]], variances=[[0.8]])
    proc = dg.GaussianProcess(data, sched)
    a = dg.GaussianLinearValue(proc, [1.2], alpha=0.7, grad_mode="analytic")
    f = dg.GaussianLinearValue(proc, [1.2], alpha=0.7, grad_mode="fd")
    x = np.array([[0.5], [-1.0]])
    assert np.allclose(a.grad(4, x), f.grad(4, x), atol=1e-5)


# ---------------------------------------------------------------------------
# Posterior-mean surrogate
# ---------------------------------------------------------------------------


def test_posterior_mean_t0_unmasked(k2l1):
    model, reward, _ = k2l1
    assert dg.posterior_mean_value(model, reward, 0, np.array([1])) == 1.0


def test_posterior_mean_jensen_gap_example(k2l1):
    model, reward, _ = k2l1
    pm = dg.posterior_mean_value(model, reward, model.T, MASKED1)
    assert pm == pytest.approx(0.25)
    assert V_MASKED_EXACT - pm == pytest.approx(0.1074, abs=1e-3)


def test_posterior_mean_equals_exact_for_point_mass():
    sched = dg.make_schedule("linear", 6)
    data = dg.DistributionTable(support=np.array([[0, 1]]), probs=np.array([1.0]))
    model = dg.MaskedProcess(data, K=2, schedule=sched)
    reward = dg.TableReward.from_entries({"AB": 0.8}, K=2, L=2)
    values = dg.ExactDiscreteValues(model, reward, 1.0)
    for t in (1, 3, 6):
        x = model.forward_sample(np.array([0, 1]), t, np.random.default_rng(t))
        assert dg.posterior_mean_value(model, reward, t, x) == pytest.approx(
            values.at_one(t, x), abs=1e-10)


# ---------------------------------------------------------------------------
# Fitted estimators
# ---------------------------------------------------------------------------


def test_mc_regression_constant_reward():
    model, _ = make_k2l1()
    const = dg.constant_table_reward(0.9, K=2, L=1)
    fit = dg.mc_regression_fit(model, const, 1.0, S=500, rng=np.random.default_rng(1))
    seen_vals = fit.table[fit.seen]
    assert np.allclose(seen_vals, 0.9, atol=1e-10)


def test_mc_regression_converges(k2l1):
    model, reward, values = k2l1
    fit = dg.mc_regression_fit(model, reward, 1.0, S=100_000,
                               rng=np.random.default_rng(2))
    errs = [abs(fit.table[t, c] - values.at_codes(t, np.array([c]))[0])
            for t in range(model.T + 1) for c in range(model.n_codes)
            if fit.seen[t, c] and np.isfinite(values.at_codes(t, np.array([c]))[0])]
    assert max(errs) < 0.02


def test_mc_regression_single_rollout():
    model, reward = make_k2l1()
    rng = np.random.default_rng(3)
    fit = dg.mc_regression_fit(model, reward, 1.0, S=1, rng=rng)
    # one trajectory: every visited cell holds exactly its observed exp target
    final = fit.table[0][fit.seen[0]]
    for t in range(model.T + 1):
        cells = fit.table[t][fit.seen[t]]
        assert np.allclose(cells, final[0], atol=1e-12)


def test_mc_regression_fallback_to_posterior_mean(k2l1):
    model, reward, _ = k2l1
    fit = dg.mc_regression_fit(model, reward, 1.0, S=3, rng=np.random.default_rng(4))
    unseen = np.argwhere(~fit.seen)
    t, code = unseen[np.argmax(unseen[:, 0])]  # some late-time unseen cell
    want = dg.posterior_mean_value(model, reward, t, model.decode(np.array(code)))
    got = fit.at_codes(t, np.array([code]))[0]
    assert got == pytest.approx(want, abs=1e-12)
    assert fit.fallback_events > 0


def test_mc_regression_log_space_option(k2l1):
    model, reward, _ = k2l1
    fit = dg.mc_regression_fit(model, reward, 1.0, S=20_000,
                               rng=np.random.default_rng(5), space="log")
    # log-space fit of the masked root estimates E[r], below the soft value
    root = int(model.encode(model.fully_masked(1)[0]))
    assert fit.table[model.T, root] == pytest.approx(0.25, abs=0.02)


def test_soft_q_one_sweep_matches_one_step_mean(k2l1):
    model, reward, values = k2l1
    fit = dg.soft_q_fit(model, reward, 1.0, S=100_000, J=1,
                        rng=np.random.default_rng(6))
    # t = 1 cells bootstrap from the t = 0 boundary: already the exact value
    for code in range(model.n_codes):
        if fit.seen[1, code]:
            want = values.at_codes(1, np.array([code]))[0]
            assert fit.table[1, code] == pytest.approx(want, abs=0.02)


def test_soft_q_constant_reward():
    model, _ = make_k2l1()
    const = dg.constant_table_reward(-0.3, K=2, L=1)
    fit = dg.soft_q_fit(model, const, 1.0, S=2_000, J=model.T,
                        rng=np.random.default_rng(7))
    assert np.allclose(fit.table[fit.seen], -0.3, atol=1e-9)


def test_soft_q_converges(k2l1):
    model, reward, values = k2l1
    fit = dg.soft_q_fit(model, reward, 1.0, S=100_000, J=model.T,
                        rng=np.random.default_rng(8))
    errs = [abs(fit.table[t, c] - values.at_codes(t, np.array([c]))[0])
            for t in range(model.T + 1) for c in range(model.n_codes)
            if fit.seen[t, c] and np.isfinite(values.at_codes(t, np.array([c]))[0])]
    assert max(errs) < 0.02


def test_fitted_values_export(tmp_path, k2l1):
    model, reward, _ = k2l1
    fit = dg.mc_regression_fit(model, reward, 1.0, S=200, rng=np.random.default_rng(9))
    path = tmp_path / "values.tsv"
    fit.write_text(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t\tstate\tvalue\tseen"
    assert len(lines) == 1 + (model.T + 1) * model.n_codes


def test_exact_values_export(tmp_path, k2l1):
    _, _, values = k2l1
    path = tmp_path / "exact.tsv"
    values.write_text(path)
    assert path.read_text().startswith("t\tstate\tvalue")


def test_relaxed_extension_vertex_consistency(tiny):
    model, _, values, _ = tiny
    x = np.array([2, 1])
    onehot = np.zeros((2, 3))
    onehot[np.arange(2), x] = 1.0
    assert values.relaxed(5, onehot) == pytest.approx(values.at_one(5, x), abs=1e-10)
