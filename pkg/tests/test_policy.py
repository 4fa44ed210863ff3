"""Path policy: distributions, sampling, log-probs and analytic gradients."""

import math

import numpy as np
import pytest

from pathopt.policy import (
    PromptContext,
    features,
    grad_log_prob,
    greedy_decode,
    init_params,
    load_params,
    log_prob_and_grad,
    path_log_prob,
    sample_group,
    sample_path,
    save_params,
    step_distribution,
    step_grads,
)
from pathopt.rewards import LengthConstraint, score_length
from pathopt.seeding import derive_seed

C = 5
H = 8


def ctx_for(l_target: int, mastery=None, proficiency: float = 0.5) -> PromptContext:
    m = np.full(C, 0.2) if mastery is None else np.asarray(mastery, dtype=float)
    return PromptContext.for_student(m, proficiency, l_target)


def uniform_params():
    p = init_params(C, hidden=H, seed=0)
    p.w2[:] = 0.0
    p.b2[:] = 0.0
    return p


def test_context_copies_mastery():
    m = np.full(C, 0.3)
    ctx = PromptContext.for_student(m, 0.5, 4)
    m[0] = 0.9
    assert ctx.mastery[0] == 0.3
    assert ctx.l_max == 8


def test_init_params_validation():
    with pytest.raises(ValueError):
        init_params(0, hidden=4)
    with pytest.raises(ValueError):
        init_params(4, hidden=0)


def test_step_distribution_normalized():
    p = init_params(C, hidden=H, seed=1)
    ctx = ctx_for(4)
    rng = np.random.default_rng(2)
    prefix: list[int] = []
    for _ in range(5):
        probs = step_distribution(p, ctx, prefix)
        assert probs.shape == (C + 1,)
        assert np.all(probs >= 0.0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        prefix.append(int(rng.integers(0, C)))


def test_stop_masked_at_first_step():
    probs = step_distribution(init_params(C, hidden=H, seed=3), ctx_for(4), [])
    assert probs[C] == 0.0


def test_uniform_path_log_prob_closed_form():
    ctx = ctx_for(3)
    logp = path_log_prob(uniform_params(), ctx, [0, 1, 2])
    assert logp == pytest.approx(-math.log(C) - 3 * math.log(C + 1), abs=1e-12)


def test_logit_shift_invariance():
    p = init_params(C, hidden=H, seed=4)
    shifted = p.copy()
    shifted.b2 += 2.7
    ctx = ctx_for(4)
    path = [1, 3, 0, 2]
    assert path_log_prob(shifted, ctx, path) == pytest.approx(
        path_log_prob(p, ctx, path), abs=1e-9
    )
    assert np.allclose(
        step_distribution(shifted, ctx, [1]), step_distribution(p, ctx, [1]), atol=1e-12
    )


def test_first_action_frequency_uniform():
    p = uniform_params()
    ctx = ctx_for(1)
    n = 10000
    hits = sum(
        1 for i in range(n) if sample_path(p, ctx, derive_seed(0, "freq", i)).path[0] == 0
    )
    se = math.sqrt((1 / C) * (1 - 1 / C) / n)
    assert abs(hits / n - 1 / C) <= 3 * se


def test_sampling_rescoring_consistency():
    p = init_params(C, hidden=H, seed=5)
    ctx = ctx_for(4)
    for i in range(50):
        s = sample_path(p, ctx, seed=i)
        assert path_log_prob(p, ctx, s.path) == pytest.approx(s.log_prob, abs=1e-9)
        assert s.log_prob == pytest.approx(sum(s.step_log_probs), abs=1e-12)


def test_sample_path_deterministic_in_seed():
    p = init_params(C, hidden=H, seed=6)
    ctx = ctx_for(4)
    assert sample_path(p, ctx, seed=9).path == sample_path(p, ctx, seed=9).path


def test_sample_group_uses_derived_subseeds():
    p = init_params(C, hidden=H, seed=7)
    ctx = ctx_for(3)
    group = sample_group(p, ctx, k=4, seed=11)
    for i, s in enumerate(group):
        assert s.path == sample_path(p, ctx, derive_seed(11, "sample", i)).path
    with pytest.raises(ValueError):
        sample_group(p, ctx, k=0, seed=11)


def test_forced_cut_at_length_cap():
    p = init_params(C, hidden=H, seed=8)
    p.b2[p.end_action] = -40.0  # stop never wins
    ctx = ctx_for(3)
    s = sample_path(p, ctx, seed=0)
    assert len(s.path) == ctx.l_max
    # rescoring a cap-length path also omits the stop term
    assert path_log_prob(p, ctx, s.path) == pytest.approx(s.log_prob, abs=1e-9)
    assert len(s.step_log_probs) == ctx.l_max


def test_path_validation():
    p = init_params(C, hidden=H, seed=9)
    ctx = ctx_for(3)
    with pytest.raises(ValueError):
        path_log_prob(p, ctx, [])
    with pytest.raises(ValueError, match="position 1"):
        path_log_prob(p, ctx, [0, C])
    with pytest.raises(ValueError, match="exceeds cap"):
        path_log_prob(p, ctx, [0] * (ctx.l_max + 1))


def test_gradient_matches_finite_differences():
    ctx = ctx_for(3)
    eps = 1e-5
    for pair in range(3):
        p = init_params(C, hidden=H, seed=20 + pair, scale=0.3)
        path = tuple(np.random.default_rng(pair).integers(0, C, size=4))
        logp, grad = log_prob_and_grad(p, ctx, path)
        assert logp == pytest.approx(path_log_prob(p, ctx, path), abs=1e-12)
        vec = p.to_vector()
        fd = np.zeros_like(vec)
        for k in range(vec.size):
            up, dn = vec.copy(), vec.copy()
            up[k] += eps
            dn[k] -= eps
            fd[k] = (
                path_log_prob(p.from_vector(up), ctx, path)
                - path_log_prob(p.from_vector(dn), ctx, path)
            ) / (2 * eps)
        denom = max(np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(grad - fd) / denom < 1e-3


def test_unvisited_prev_action_columns_have_zero_gradient():
    p = init_params(C, hidden=H, seed=30)
    ctx = ctx_for(3)
    path = (0, 1)  # prev-action slots touched: spare, 0, 1
    grad = grad_log_prob(p, ctx, path)
    gw1 = grad[: p.w1.size].reshape(p.w1.shape)
    for unused in (2, 3, 4):
        assert np.all(gw1[:, C + 2 + unused] == 0.0)
    assert np.any(gw1[:, C + 2 + 0] != 0.0)


def test_output_bias_gradient_sums_to_zero():
    p = init_params(C, hidden=H, seed=31)
    ctx = ctx_for(4)
    grad = grad_log_prob(p, ctx, (2, 0, 3))
    gb2 = grad[-(C + 1) :]
    assert gb2.sum() == pytest.approx(0.0, abs=1e-9)


def test_step_grads_sum_to_path_gradient():
    p = init_params(C, hidden=H, seed=32)
    ctx = ctx_for(3)
    path = (1, 4, 2)
    logps, grads = step_grads(p, ctx, path)
    total, grad = log_prob_and_grad(p, ctx, path)
    assert len(logps) == len(path) + 1  # terminal stop scored below the cap
    assert sum(logps) == pytest.approx(total, abs=1e-12)
    assert np.allclose(np.sum(grads, axis=0), grad, atol=1e-12)


def test_greedy_decode_deterministic_and_bounded():
    p = init_params(C, hidden=H, seed=33)
    ctx = ctx_for(4)
    path = greedy_decode(p, ctx)
    assert path == greedy_decode(p, ctx)
    assert 0 < len(path) <= ctx.l_max
    assert all(0 <= c < C for c in path)


def test_params_round_trip(tmp_path):
    p = init_params(C, hidden=H, seed=34)
    f = str(tmp_path / "policy.json")
    save_params(p, f)
    q = load_params(f)
    assert q.num_concepts == C and q.hidden == H
    assert np.array_equal(q.to_vector(), p.to_vector())


def test_load_rejects_unknown_version(tmp_path):
    p = init_params(C, hidden=H, seed=35)
    f = str(tmp_path / "policy.json")
    save_params(p, f)
    text = (tmp_path / "policy.json").read_text().replace('"version": 1', '"version": 99')
    (tmp_path / "policy.json").write_text(text)
    with pytest.raises(ValueError, match="version"):
        load_params(f)


def test_from_vector_length_check():
    p = init_params(C, hidden=H, seed=36)
    with pytest.raises(ValueError):
        p.from_vector(np.zeros(p.num_params() + 1))


def test_features_layout():
    p = init_params(C, hidden=H, seed=37)
    ctx = ctx_for(4, mastery=np.linspace(0.1, 0.5, C), proficiency=0.7)
    x = features(ctx, [3], p)
    assert np.allclose(x[:C], ctx.mastery)
    assert x[C] == 0.7
    assert x[C + 1] == pytest.approx(1 / ctx.l_max)
    assert x[C + 2 + 3] == 1.0
    assert x[-1] == pytest.approx((4 - 1) / ctx.l_max)
    x0 = features(ctx, [], p)
    assert x0[C + 2 + C] == 1.0  # spare slot marks "no previous action"


def test_length_reward_gradient_shapes_length():
    # pure policy-gradient loop on the length score alone: the mean absolute
    # deviation from the target must shrink.
    lc = LengthConstraint(target=4, tolerance=0, penalty=0.2)
    ctx = ctx_for(4)
    p = init_params(C, hidden=H, seed=40)

    def mean_dev(params, seed0):
        lens = [
            len(sample_path(params, ctx, derive_seed(seed0, "m", i)).path) for i in range(64)
        ]
        return float(np.mean([abs(l - lc.target) for l in lens]))

    before = mean_dev(p, 1000)
    vec = p.to_vector()
    for it in range(60):
        group = sample_group(p.from_vector(vec), ctx, k=8, seed=it)
        rewards = np.array([score_length(s.path, lc) for s in group])
        adv = rewards - rewards.mean()
        if np.all(adv == 0.0):
            continue
        upd = np.zeros_like(vec)
        for s, a in zip(group, adv):
            upd += a * grad_log_prob(p.from_vector(vec), ctx, s.path)
        vec = vec + 0.05 * upd / len(group)
    after = mean_dev(p.from_vector(vec), 1000)
    assert after < before
