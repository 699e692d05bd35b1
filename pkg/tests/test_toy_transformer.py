"""Toy attention model: gradients vs finite differences, bound certificates."""

import json
import math

import numpy as np
import pytest

from oracles import central_difference_gradient, cross_block_loops, softmax_jacobian_norm_loops
from xmas.toy_transformer import (
    BoundConfig,
    ToyExample,
    ToyModel,
    attention_distance,
    build_verification_fixture,
    cross_modal_block,
    decompose_attention,
    descent_checkpoints,
    estimate_curvature,
    example_loss,
    forward,
    gain_threshold,
    grad,
    gradient_gap_bound,
    interval_gap_bound,
    loss_value,
    per_example_grads,
    rms_normalize,
    softmax_jacobian_fro_norm,
    sum_gradient,
    verify_bounds,
)


def random_instance(rng):
    n_tok = int(rng.integers(2, 9))
    d = int(rng.integers(1, 5))
    big_d = int(rng.integers(1, 5))
    n_img = int(rng.integers(1, n_tok))
    model = ToyModel(
        w_q=rng.standard_normal((d, big_d)),
        w_k=rng.standard_normal((d, big_d)),
        w_v=rng.standard_normal((d, big_d)),
        gain=float(rng.uniform(0.2, 1.5)),
    )
    example = ToyExample(
        tokens=rng.standard_normal((n_tok, d)),
        labels=rng.standard_normal((n_tok, big_d)),
        n_img=n_img,
        n_txt=n_tok - n_img,
    )
    return model, example


# ------------------------------------------------------------- forward pass


def test_rms_normalize_row_norms():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3))
    xn = rms_normalize(x, gain=0.7)
    np.testing.assert_allclose(
        np.linalg.norm(xn, axis=1), 0.7 * math.sqrt(3), rtol=1e-12
    )
    # direction preserved
    np.testing.assert_allclose(
        xn / np.linalg.norm(xn, axis=1, keepdims=True),
        x / np.linalg.norm(x, axis=1, keepdims=True),
        rtol=1e-12,
    )


def test_rms_normalize_rejects_zero_row():
    with pytest.raises(ValueError):
        rms_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]), 1.0)


def test_forward_rows_are_stochastic():
    rng = np.random.default_rng(1)
    model, example = random_instance(rng)
    _, s, _ = forward(model, example)
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


def test_loss_value_hand_case():
    out = np.ones((2, 2))
    labels = np.zeros((2, 2))
    assert loss_value(out, labels) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        loss_value(np.ones((2, 2)), np.ones((2, 3)))


def test_model_and_example_validation():
    with pytest.raises(ValueError):
        ToyModel(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)), 1.0)
    with pytest.raises(ValueError):
        ToyModel(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), 0.0)
    with pytest.raises(ValueError):
        ToyModel(np.full((2, 2), np.nan), np.ones((2, 2)), np.ones((2, 2)), 1.0)
    with pytest.raises(ValueError):
        ToyExample(np.ones((1, 2)), np.ones((1, 2)), 1, 0)
    with pytest.raises(ValueError):
        ToyExample(np.ones((3, 2)), np.ones((3, 2)), 1, 1)
    with pytest.raises(ValueError):
        ToyExample(np.ones((3, 2)), np.ones((2, 2)), 2, 1)


def test_flat_params_round_trip():
    rng = np.random.default_rng(2)
    model, _ = random_instance(rng)
    flat = model.flat_params()
    back = model.with_params(flat)
    np.testing.assert_array_equal(back.w_q, model.w_q)
    np.testing.assert_array_equal(back.w_k, model.w_k)
    np.testing.assert_array_equal(back.w_v, model.w_v)
    assert model.param_norm() == pytest.approx(np.linalg.norm(flat))


# ---------------------------------------------------- gradient correctness


def test_gradients_match_central_differences_100_instances():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        model, example = random_instance(rng)
        theta = model.flat_params()
        step = 1e-5 * max(1.0, float(np.linalg.norm(theta)))

        def f(flat):
            return example_loss(model.with_params(flat), example)

        numeric = central_difference_gradient(f, theta, step)
        analytic = grad(model, example).flat()
        scale = max(float(np.linalg.norm(numeric)), 1e-12)
        rel = float(np.linalg.norm(analytic - numeric)) / scale
        worst = max(worst, rel)
    assert worst <= 1e-5, worst


def test_gradient_blocks_individually_match():
    rng = np.random.default_rng(43)
    model, example = random_instance(rng)
    theta = model.flat_params()
    step = 1e-5 * max(1.0, float(np.linalg.norm(theta)))

    def f(flat):
        return example_loss(model.with_params(flat), example)

    numeric = central_difference_gradient(f, theta, step)
    g = grad(model, example)
    size = model.w_q.size
    for offset, block in ((0, g.w_q), (size, g.w_k), (2 * size, g.w_v)):
        num = numeric[offset : offset + size].reshape(block.shape)
        np.testing.assert_allclose(block, num, rtol=2e-5, atol=1e-8)


def test_per_example_grads_match_single_calls():
    rng = np.random.default_rng(44)
    d, big_d, n = 3, 2, 4
    model = ToyModel(
        rng.standard_normal((d, big_d)),
        rng.standard_normal((d, big_d)),
        rng.standard_normal((d, big_d)),
        gain=0.8,
    )
    dataset = [
        ToyExample(rng.standard_normal((n, d)), rng.standard_normal((n, big_d)), 2, 2)
        for _ in range(5)
    ]
    stacked = per_example_grads(model, dataset)
    assert stacked.shape == (5, 3 * d * big_d)
    for i, ex in enumerate(dataset):
        np.testing.assert_allclose(stacked[i], grad(model, ex).flat(), rtol=1e-12)
    np.testing.assert_allclose(sum_gradient(model, dataset), stacked.sum(axis=0), rtol=1e-12)


def test_empty_dataset_gradients():
    model = ToyModel(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), 1.0)
    assert per_example_grads(model, []).shape == (0, 12)
    np.testing.assert_array_equal(sum_gradient(model, []), np.zeros(12))


# ------------------------------------------------------- softmax Jacobian


def test_jacobian_norm_bound_over_random_matrices():
    rng = np.random.default_rng(45)
    for _ in range(200):
        n = int(rng.integers(2, 17))
        s = rng.dirichlet(np.ones(n) * rng.uniform(0.3, 4.0), size=n)
        norm = softmax_jacobian_fro_norm(s)
        assert norm <= math.sqrt(n) / 2.0 + 1e-12
        assert norm == pytest.approx(softmax_jacobian_norm_loops(s), rel=1e-12)


def test_jacobian_equality_at_two_token_uniform():
    s = np.full((2, 2), 0.5)
    assert softmax_jacobian_fro_norm(s) == pytest.approx(math.sqrt(2) / 2.0, abs=1e-9)


def test_jacobian_zero_on_one_hot_rows():
    s = np.eye(5)
    assert softmax_jacobian_fro_norm(s) == 0.0


def test_jacobian_single_half_half_row():
    # one maximal row contributes 1/4 to the squared norm
    s = np.array([[0.5, 0.5], [0.0, 1.0]])
    assert softmax_jacobian_fro_norm(s) == pytest.approx(0.5, rel=1e-12)


def test_jacobian_rejects_non_stochastic():
    with pytest.raises(ValueError):
        softmax_jacobian_fro_norm(np.array([[0.2, 0.2]]))
    with pytest.raises(ValueError):
        softmax_jacobian_fro_norm(np.array([[1.5, -0.5]]))


# --------------------------------------------------- attention structure


def test_decompose_attention_exact_reconstruction():
    rng = np.random.default_rng(46)
    for _ in range(20):
        n_img = int(rng.integers(1, 4))
        n_txt = int(rng.integers(1, 4))
        n = n_img + n_txt
        s = rng.dirichlet(np.ones(n), size=n)
        cross, mirror, remainder = decompose_attention(s, n_img, n_txt)
        np.testing.assert_array_equal(cross + mirror + remainder, s)
        # placement: cross only bottom-left, mirror only top-right
        assert np.all(cross[:n_img, :] == 0) and np.all(cross[:, n_img:] == 0)
        assert np.all(mirror[n_img:, :] == 0) and np.all(mirror[:, :n_img] == 0)
        np.testing.assert_array_equal(cross[n_img:, :n_img], s[n_img:, :n_img])


def test_cross_modal_block_matches_loop_oracle():
    rng = np.random.default_rng(47)
    s = rng.dirichlet(np.ones(6), size=6)
    np.testing.assert_array_equal(cross_modal_block(s, 2, 4), cross_block_loops(s, 2))


def test_attention_distance_zero_on_identical():
    rng = np.random.default_rng(48)
    model, example = random_instance(rng)
    assert attention_distance(model, model, example, example) == 0.0


def test_attention_distance_matches_manual_computation():
    rng = np.random.default_rng(49)
    d = big_d = 2
    model_a = ToyModel(*rng.standard_normal((3, d, big_d)), gain=0.6)
    model_b = ToyModel(*rng.standard_normal((3, d, big_d)), gain=0.6)
    ex_i = ToyExample(rng.standard_normal((4, d)), rng.standard_normal((4, big_d)), 2, 2)
    ex_j = ToyExample(rng.standard_normal((4, d)), rng.standard_normal((4, big_d)), 2, 2)

    def manual_chi(model, ex):
        xn = rms_normalize(ex.tokens, model.gain)
        a = (xn @ model.w_q) @ (xn @ model.w_k).T / math.sqrt(big_d)
        e = np.exp(a - a.max(axis=1, keepdims=True))
        s = e / e.sum(axis=1, keepdims=True)
        return cross_block_loops(s, 2)

    want = float(np.linalg.norm(manual_chi(model_a, ex_i) - manual_chi(model_b, ex_j)))
    got = attention_distance(model_a, model_b, ex_i, ex_j)
    assert got == pytest.approx(want, rel=1e-12)


def test_attention_distance_symmetry_and_split_check():
    rng = np.random.default_rng(50)
    d = big_d = 2
    model = ToyModel(*rng.standard_normal((3, d, big_d)), gain=0.5)
    ex_i = ToyExample(rng.standard_normal((4, d)), rng.standard_normal((4, big_d)), 2, 2)
    ex_j = ToyExample(rng.standard_normal((4, d)), rng.standard_normal((4, big_d)), 2, 2)
    assert attention_distance(model, model, ex_i, ex_j) == pytest.approx(
        attention_distance(model, model, ex_j, ex_i)
    )
    ex_bad = ToyExample(rng.standard_normal((4, d)), rng.standard_normal((4, big_d)), 1, 3)
    with pytest.raises(ValueError):
        attention_distance(model, model, ex_i, ex_bad)


# ------------------------------------------------------------ bound values


def cfg_with(**kw):
    base = dict(
        param_cap=1.0, proxy_gap=0.0, curvature=0.0, checkpoint_gap=0.0,
        n_tokens=4, hidden_dim=2,
    )
    base.update(kw)
    return BoundConfig(**base)


def test_gap_bound_additive_term_value():
    # k=0, T=0, N=4, c=1 leaves only 8*sqrt(N)/(3*sqrt(3)*c) = 16/(3*sqrt(3))
    got = gradient_gap_bound(0.0, cfg_with())
    assert got == pytest.approx(16.0 / (3.0 * math.sqrt(3.0)), abs=1e-12)
    assert got == pytest.approx(3.079201435678004, abs=1e-12)


def test_gap_bound_affine_in_distance_and_proxy_gap():
    base = gradient_gap_bound(0.0, cfg_with())
    assert gradient_gap_bound(1.0, cfg_with()) - base == pytest.approx(
        4.0 / math.sqrt(3.0), abs=1e-12
    )
    assert gradient_gap_bound(0.0, cfg_with(proxy_gap=1.0)) - base == pytest.approx(
        8.0 / math.sqrt(3.0), abs=1e-12
    )


def test_gap_bound_additive_term_doubles_when_cap_halves():
    a = gradient_gap_bound(0.0, cfg_with(param_cap=1.0))
    b = gradient_gap_bound(0.0, cfg_with(param_cap=0.5))
    assert b == pytest.approx(2.0 * a, rel=1e-12)


def test_gap_bound_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gradient_gap_bound(-0.1, cfg_with())
    with pytest.raises(ValueError):
        gradient_gap_bound(0.0, cfg_with(param_cap=0.0))
    with pytest.raises(ValueError):
        BoundConfig(-1.0, 0.0, 0.0, 0.0, 4, 2)


def test_gain_threshold_values():
    assert gain_threshold(1, 1, 1.0) == pytest.approx(1.0, abs=1e-15)
    # N=4, D=2, c=1: 4^(-5/8) * 2^(-1/8) = 2^(-11/8)
    assert gain_threshold(4, 2, 1.0) == pytest.approx(2.0 ** (-11.0 / 8.0), abs=1e-15)
    assert gain_threshold(4, 2, 1.0) == pytest.approx(0.3855527063519852, abs=1e-15)


def test_gain_threshold_monotone_decreasing():
    base = gain_threshold(4, 2, 1.0)
    assert gain_threshold(8, 2, 1.0) < base
    assert gain_threshold(4, 4, 1.0) < base
    assert gain_threshold(4, 2, 2.0) < base
    with pytest.raises(ValueError):
        gain_threshold(0, 2, 1.0)


def test_interval_bound_hand_case():
    cfg = cfg_with(checkpoint_gap=0.5, curvature=3.0)
    assert interval_gap_bound(1.0, 2.0, cfg) == pytest.approx(5.0)
    cfg0 = cfg_with(checkpoint_gap=0.0, curvature=3.0)
    assert interval_gap_bound(1.0, 2.0, cfg0) == pytest.approx(2.0)


# -------------------------------------------------------------- curvature


def test_curvature_quadratic_oracle():
    # d = D = 1 with all-positive tokens: the normalized rows coincide, the
    # softmax saturates uniform, and the loss is quadratic in w_v alone with
    # constant gradient-Lipschitz constant 2 g^2.
    g = 0.8
    model = ToyModel(np.array([[0.3]]), np.array([[-0.7]]), np.array([[0.2]]), gain=g)
    rng = np.random.default_rng(51)
    dataset = [
        ToyExample(rng.uniform(0.5, 2.0, size=(3, 1)), rng.standard_normal((3, 1)), 2, 1)
        for _ in range(3)
    ]
    est = estimate_curvature(model, dataset, radius=0.1, samples=64, seed=7)
    want = 2.0 * g * g
    assert est == pytest.approx(want, rel=0.10)
    assert est <= want + 1e-12  # ratio can never exceed the true constant


def test_curvature_zero_dataset_and_monotone_samples():
    model = ToyModel(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), 1.0)
    assert estimate_curvature(model, [], radius=0.1, samples=8) == 0.0
    rng = np.random.default_rng(52)
    dataset = [
        ToyExample(rng.standard_normal((4, 2)), rng.standard_normal((4, 2)), 2, 2)
        for _ in range(2)
    ]
    small = estimate_curvature(model, dataset, radius=0.05, samples=8, seed=3)
    large = estimate_curvature(model, dataset, radius=0.05, samples=32, seed=3)
    assert large >= small  # same generator stream, strictly more draws
    with pytest.raises(ValueError):
        estimate_curvature(model, dataset, radius=0.0, samples=4)


# ------------------------------------------------------- checkpoint sweep


@pytest.fixture(scope="module")
def fixture_sweep():
    models, dataset, cfg = build_verification_fixture(seed=0)
    report = verify_bounds(models, dataset, cfg, interp_points=10)
    return models, dataset, cfg, report


def test_descent_checkpoints_structure(fixture_sweep):
    models, dataset, _, _ = fixture_sweep
    assert len(models) == 3
    # checkpoints move and training reduces the summed loss
    losses = [sum(example_loss(m, ex) for ex in dataset) for m in models]
    assert losses[-1] < losses[0]
    assert all(
        np.linalg.norm(a.flat_params() - b.flat_params()) > 0
        for a, b in zip(models, models[1:])
    )


def test_fixture_satisfies_preconditions(fixture_sweep):
    models, _, cfg, _ = fixture_sweep
    threshold = gain_threshold(cfg.n_tokens, cfg.hidden_dim, cfg.param_cap)
    for m in models:
        assert m.param_norm() <= cfg.param_cap
        assert m.gain < threshold


def test_sweep_zero_violations(fixture_sweep):
    _, _, _, report = fixture_sweep
    assert report.ok
    assert report.violations == []
    assert report.checkpoint_checks == 84  # 28 pairs x 3 checkpoints
    assert report.interval_checks == 560  # 28 pairs x 10 points x 2 spans
    assert report.max_checkpoint_ratio <= 1.0
    assert report.max_interval_ratio <= 1.0
    assert len(report.deltas) == 2


def test_sweep_certificates_nonvacuous(fixture_sweep):
    _, _, _, report = fixture_sweep
    assert report.nonvacuous
    assert report.min_bound < 2.0 * report.max_grad_norm
    assert report.max_grad_norm > 0


def test_sweep_duplicate_pair_certificate_is_tightest(fixture_sweep):
    models, dataset, cfg, _ = fixture_sweep
    # the exact duplicate pair (0, 1) has attention distance 0, so its
    # certificate collapses to the additive floor
    k01 = attention_distance(models[0], models[0], dataset[0], dataset[1])
    assert k01 == 0.0
    floor = gradient_gap_bound(0.0, cfg)
    assert gradient_gap_bound(k01, cfg) == pytest.approx(floor)


def test_sweep_report_json(fixture_sweep):
    _, _, _, report = fixture_sweep
    doc = json.loads(report.to_json())
    assert doc["violations"] == []
    assert doc["checkpoint_checks"] == 84
    assert doc["metadata"]["n_examples"] == 8
    assert "rms_row_norm" in doc["metadata"]


def test_sweep_skips_when_cap_too_small(fixture_sweep):
    models, dataset, cfg, _ = fixture_sweep
    tiny = BoundConfig(
        param_cap=1e-6, proxy_gap=0.0, curvature=cfg.curvature,
        checkpoint_gap=cfg.checkpoint_gap, n_tokens=cfg.n_tokens,
        hidden_dim=cfg.hidden_dim,
    )
    report = verify_bounds(models, dataset, tiny, interp_points=3)
    assert report.checkpoint_checks == 0
    assert len(report.warnings) >= 3
    assert report.ok  # skipped is not failed
    assert math.isnan(report.min_bound)


def test_sweep_threads_match_single(fixture_sweep):
    models, dataset, cfg, report = fixture_sweep
    threaded = verify_bounds(models, dataset, cfg, interp_points=10, threads=4)
    assert threaded.checkpoint_checks == report.checkpoint_checks
    assert threaded.interval_checks == report.interval_checks
    assert threaded.max_checkpoint_ratio == report.max_checkpoint_ratio
    assert threaded.max_interval_ratio == report.max_interval_ratio
    assert threaded.violations == report.violations


def test_sweep_empty_inputs():
    report = verify_bounds([], [], cfg_with())
    assert report.ok and report.warnings
