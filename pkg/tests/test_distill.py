import numpy as np
import pytest

import diffguide as dg
from diffguide.distill import GuidedTeacher

from conftest import make_tiny


@pytest.fixture(scope="module")
def setup():
    model, reward = make_tiny()
    values = dg.ExactDiscreteValues(model, reward, 1.0)
    return model, reward, values


def row_tv(a, b):
    return 0.5 * float(np.abs(a - b).sum())


# ---------------------------------------------------------------------------
# Tabular policy plumbing
# ---------------------------------------------------------------------------


def test_pretrained_init_rows_normalize(setup):
    model, _, _ = setup
    student = dg.TabularPolicy.pretrained_init(model)
    for (t, code), row in student.rows.items():
        assert row.probs().sum() == pytest.approx(1.0, abs=1e-10)
        # support matches the pretrained kernel's support
        succ, probs = model._successor_dist(t, model.decode(np.array(code)))
        assert set(map(int, model.encode(succ))) == set(map(int, row.succ_codes))


def test_pretrained_student_induces_pretrained_law(setup):
    model, _, _ = setup
    student = dg.TabularPolicy.pretrained_init(model)
    assert dg.tv_distance(student.induced_law(), model.induced_law()) < 1e-10


def test_student_serialization(tmp_path, setup):
    model, _, _ = setup
    student = dg.TabularPolicy.pretrained_init(model)
    path = tmp_path / "student.tsv"
    student.write_text(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t\tstate\tnext\tprob"
    probs = {}
    for line in lines[1:]:
        t, state, nxt, p = line.split("\t")
        probs.setdefault((t, state), 0.0)
        probs[(t, state)] += float(p)
    assert all(abs(v - 1.0) < 1e-9 for v in probs.values())


# ---------------------------------------------------------------------------
# Roll-in streams
# ---------------------------------------------------------------------------


def test_rollin_forward_recycle_mask_frequency(setup):
    model, _, _ = setup
    spec = dg.RollinSpec(kind="forward_recycle", dataset=model.data.support)
    rng = np.random.default_rng(0)
    for t, states in dg.make_rollin(spec, None, None, model, 40_000, rng):
        want = 1.0 - model.schedule.alpha_bar[t]
        assert np.mean(states == model.mask) == pytest.approx(want, abs=0.01)


def test_rollin_forward_recycle_needs_dataset():
    with pytest.raises(ValueError):
        dg.RollinSpec(kind="forward_recycle", dataset=None)


def test_rollin_student_kind_uses_student_law(setup):
    model, _, _ = setup
    student = dg.TabularPolicy.pretrained_init(model)
    spec = dg.RollinSpec(kind="student")
    rng = np.random.default_rng(1)
    batches = dict(dg.make_rollin(spec, None, student, model, 30_000, rng))
    # at every t the student (= pretrained) roll-in matches the pretrained law
    for t in (4, 1):
        marg = np.mean(batches[t] == model.mask)
        want = 1.0 - model.schedule.alpha_bar[t]
        assert marg == pytest.approx(want, abs=0.015)


def test_rollin_mix_one_is_pure_teacher(setup):
    model, _, _ = setup

    sentinel = np.array([[1, 1]])

    class StubTeacher(GuidedTeacher):
        def __init__(self):
            pass

        def rollout(self, n, rng):
            return np.tile(sentinel, (model.T + 1, n, 1))

    spec = dg.RollinSpec(kind="teacher", mix=1.0)
    rng = np.random.default_rng(2)
    for t, states in dg.make_rollin(spec, StubTeacher(), None, model, 16, rng):
        assert np.all(states == 1)


def test_rollin_unknown_kind():
    with pytest.raises(ValueError):
        dg.RollinSpec(kind="oracle")


# ---------------------------------------------------------------------------
# Forward KL (closed-form MLE)
# ---------------------------------------------------------------------------


def test_distill_kl_closed_form_is_empirical_frequency(setup):
    model, _, _ = setup

    class DeterministicTeacher(GuidedTeacher):
        """Always unmasks every masked position to token 0."""

        def __init__(self):
            self.model = model

        def step(self, t, states, rng):
            return np.where(states == model.mask, 0, states)

    student = dg.TabularPolicy.pretrained_init(model)
    student = dg.distill_kl(DeterministicTeacher(), student,
                            dg.RollinSpec(kind="forward_recycle",
                                          dataset=model.data.support),
                            2_000, np.random.default_rng(3))
    for key in student.updated_cells:
        row = student.rows[key]
        code = key[1]
        target = np.where(model.decode(np.array(code)) == model.mask, 0,
                          model.decode(np.array(code)))
        want_code = int(model.encode(target))
        probs = row.probs()
        assert probs[np.where(row.succ_codes == want_code)[0][0]] > 1.0 - 1e-6


def test_self_distillation_recovers_pretrained(setup):
    model, _, _ = setup
    teacher = dg.pretrained_teacher(model)
    student = dg.TabularPolicy.pretrained_init(model)
    # perturb the student so recovery is non-trivial
    for row in student.rows.values():
        row.logits = row.logits + 0.5
    student = dg.distill_kl(teacher, student, dg.RollinSpec(kind="teacher"),
                            100_000, np.random.default_rng(4))
    assert dg.tv_distance(student.induced_law(), model.induced_law()) < 0.02
    # the root cell sees all 1e5 visits: its row is tight
    root = (model.T, int(model.encode(model.fully_masked(1)[0])))
    _, p_student = student.row_probs(*root)
    succ, p_pre = model._successor_dist(model.T, model.fully_masked(1)[0])
    order = np.argsort(model.encode(succ))
    assert row_tv(p_student, p_pre[order]) < 0.02


def test_distill_kl_student_matches_teacher_law(setup):
    model, reward, values = setup
    teacher = dg.svdd_teacher(model, values,
                              dg.GuidanceConfig(alpha=1.0, duplication=16))
    student = dg.TabularPolicy.pretrained_init(model)
    student = dg.distill_kl(teacher, student, dg.RollinSpec(kind="teacher"),
                            40_000, np.random.default_rng(5))
    teacher_draws = teacher.rollout(60_000, np.random.default_rng(6))[0]
    emp = dg.empirical_table(model.data.support, teacher_draws)
    law = student.induced_law()
    assert row_tv(law.probs, emp.probs) < 0.05


# ---------------------------------------------------------------------------
# Path consistency
# ---------------------------------------------------------------------------


def _transition_batch(model, teacher, n, seed):
    path = teacher.rollout(n, np.random.default_rng(seed))
    out = []
    for t in range(model.T, 0, -1):
        for i in range(n):
            out.append((t, path[t][i], path[t - 1][i]))
    return out


def test_pcl_zero_at_oracle_policy(setup):
    model, _, values = setup
    opt = dg.oracle_policy(model, values, 1.0)
    batch = _transition_batch(model, dg.pretrained_teacher(model), 20, 7)
    assert dg.pcl_loss(opt, values, model, batch, 1.0) < 1e-12


def test_pcl_positive_at_pretrained(setup):
    model, _, values = setup
    student = dg.TabularPolicy.pretrained_init(model)
    batch = _transition_batch(model, dg.pretrained_teacher(model), 20, 8)
    assert dg.pcl_loss(student, values, model, batch, 1.0) > 1e-4


def test_pcl_rejects_out_of_support_transition(setup):
    model, _, values = setup
    student = dg.TabularPolicy.pretrained_init(model)
    # staying fully masked at the final step is outside the pretrained support
    masked = model.fully_masked(1)[0]
    with pytest.raises(ValueError):
        dg.pcl_loss(student, values, model, [(1, masked, masked)], 1.0)


def test_distill_kl_leaves_unvisited_cells_at_pretrained(setup):
    model, _, values = setup
    teacher = dg.svdd_teacher(model, values,
                              dg.GuidanceConfig(alpha=1.0, duplication=4))
    student = dg.TabularPolicy.pretrained_init(model)
    student = dg.distill_kl(teacher, student, dg.RollinSpec(kind="teacher"),
                            30, np.random.default_rng(20))
    untouched = set(student.rows) - student.updated_cells
    assert untouched      # 30 trajectories cannot visit every cell
    for key in untouched:
        assert np.allclose(student.rows[key].logits, student.rows[key].pre_logp)


def test_pcl_fit_reaches_oracle_rows(setup):
    model, reward, values = setup
    student = dg.pcl_fit(dg.TabularPolicy.pretrained_init(model), values, model, 1.0)
    opt = dg.oracle_policy(model, values, 1.0)
    worst = max(row_tv(opt.row_probs(*k)[1], student.row_probs(*k)[1])
                for k in student.rows)
    assert worst < 0.02
    oracle = dg.brute_force_target(model.induced_law(), reward, 1.0)
    assert dg.tv_distance(student.induced_law(), oracle.table) < 0.05


# ---------------------------------------------------------------------------
# Inverse KL
# ---------------------------------------------------------------------------


def test_inverse_kl_stationary_at_oracle(setup):
    model, _, values = setup
    opt = dg.oracle_policy(model, values, 1.0)
    assert dg.inverse_kl_grad_norm(opt, values, 1.0) < 1e-10
    before = {k: r.logits.copy() for k, r in opt.rows.items()}
    dg.distill_inverse_kl_step(opt, values, model, list(opt.rows), 1.0, lr=1.0)
    worst = max(np.abs(opt.rows[k].logits - before[k]).max() for k in before)
    assert worst < 1e-10


def test_inverse_kl_large_alpha_matches_plain_kl_direction(setup):
    model, _, values = setup
    student = dg.TabularPolicy.pretrained_init(model)
    key = next(iter(student.rows))
    student.rows[key].logits = student.rows[key].logits + \
        np.linspace(0.0, 0.3, len(student.rows[key].logits))
    from scipy.special import logsumexp
    row = student.rows[key]
    lt = row.logits - logsumexp(row.logits)
    p = np.exp(lt)
    adv = lt - row.pre_logp
    plain_kl_grad = p * (adv - p @ adv)
    expected = row.logits - plain_kl_grad
    dg.distill_inverse_kl_step(student, values, model, [key], alpha=1e12, lr=1.0)
    assert np.allclose(student.rows[key].logits, expected, atol=1e-6)


def test_inverse_kl_converges_to_oracle(setup):
    model, _, values = setup
    student = dg.TabularPolicy.pretrained_init(model)
    cells = list(student.rows)
    for _ in range(400):
        dg.distill_inverse_kl_step(student, values, model, cells, 1.0, lr=0.5)
    opt = dg.oracle_policy(model, values, 1.0)
    worst = max(row_tv(opt.row_probs(*k)[1], student.row_probs(*k)[1])
                for k in student.rows)
    assert worst < 0.02


def test_inverse_kl_is_mode_seeking(setup):
    # biased (small-M) SVDD teacher under-tilts; the forward-KL student copies
    # it while the inverse-KL student optimizes against exact values
    model, _, _ = setup
    alpha = 0.35
    rew = dg.TableReward(np.array([0.0, 0.75, 0.9, 0.0]), K=2, L=2)
    values = dg.ExactDiscreteValues(model, rew, alpha)
    oracle = dg.brute_force_target(model.induced_law(), rew, alpha)
    mode = int(np.argmax(oracle.table.probs))

    teacher = dg.svdd_teacher(model, values,
                              dg.GuidanceConfig(alpha=alpha, duplication=4))
    stud_f = dg.distill_kl(teacher, dg.TabularPolicy.pretrained_init(model),
                           dg.RollinSpec(kind="teacher"), 20_000,
                           np.random.default_rng(9))
    stud_i = dg.TabularPolicy.pretrained_init(model)
    cells = list(stud_i.rows)
    for _ in range(400):
        dg.distill_inverse_kl_step(stud_i, values, model, cells, alpha, lr=0.5)
    mass_f = stud_f.induced_law().probs[mode]
    mass_i = stud_i.induced_law().probs[mode]
    assert mass_i >= mass_f


def test_pcl_and_inverse_kl_agree_at_optimum(setup):
    model, _, values = setup
    pcl_student = dg.pcl_fit(dg.TabularPolicy.pretrained_init(model), values,
                             model, 1.0)
    inv_student = dg.TabularPolicy.pretrained_init(model)
    cells = list(inv_student.rows)
    for _ in range(400):
        dg.distill_inverse_kl_step(inv_student, values, model, cells, 1.0, lr=0.5)
    opt = dg.oracle_policy(model, values, 1.0)
    for key in opt.rows:
        p_star = opt.row_probs(*key)[1]
        assert row_tv(pcl_student.row_probs(*key)[1], p_star) < 0.02
        assert row_tv(inv_student.row_probs(*key)[1], p_star) < 0.02


def test_student_is_valid_proposal(setup):
    model, reward, values = setup
    student = dg.oracle_policy(model, values, 1.0)
    kernel = student.as_kernel()
    cfg = dg.GuidanceConfig(alpha=1.0, n_particles=3_000, duplication=4, seed=10,
                            proposal=kernel)
    rep = dg.svdd(model, values, cfg, reward=reward)
    oracle = dg.brute_force_target(model.induced_law(), reward, 1.0)
    emp = dg.empirical_table(oracle.table.support, rep.final_states)
    assert dg.tv_distance(emp, oracle.table) < 0.05
