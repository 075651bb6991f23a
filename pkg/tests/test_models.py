import numpy as np
import pytest

from helpers import central_difference, rel_err
from liftplace.autodiff import Var, backward
from liftplace.models import (
    AdamState,
    LinearMap,
    MLPDenoiser,
    adam_step,
    load_checkpoint,
    save_checkpoint,
)
from liftplace.models import EMB_DIM, _t_features
from liftplace.numerics import Rng


def test_zero_weights_give_zero_output():
    model = MLPDenoiser(3, [5, 5], 10, Rng(0))
    for w in model.weights:
        w.value = np.zeros_like(w.value)
    out = model(Rng(1).normal((4, 3)), 7)
    assert np.array_equal(out, np.zeros((4, 3)))


def test_forward_matches_matrix_oracle():
    model = MLPDenoiser(4, [8, 6], 25, Rng(2))
    x = Rng(3).normal((5, 4))
    got = model(x, 13)
    # oracle: explicit loop with silu applied to hidden layers only
    tf = _t_features(13, 5, 25)
    h = np.concatenate([x, tf], axis=1)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.value + b.value
        if i < len(model.widths):
            s = 1.0 / (1.0 + np.exp(-h))
            h = h * s
    assert np.allclose(got, h, rtol=1e-12, atol=1e-14)


def test_forward_accepts_vector_and_per_row_t():
    model = MLPDenoiser(2, [4], 9, Rng(4))
    single = model(np.ones(2), 3)
    assert single.shape == (2,)
    batch = model(np.ones((3, 2)), np.array([1, 5, 9]))
    assert batch.shape == (3, 2)
    assert np.allclose(batch[0] - model(np.ones(2), 1), 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        model(np.ones((2, 3)), 1)
    with pytest.raises(ValueError):
        model(np.ones((3, 2)), np.array([1, 2]))


def test_record_and_value_paths_agree():
    model = MLPDenoiser(3, [6, 6], 12, Rng(5))
    x = Rng(6).normal((4, 3))
    out_var, feats_var = model.forward(x, 5, record=True)
    out_val, feats_val = model.forward(x, 5, record=False)
    assert np.array_equal(out_var.value, out_val)
    assert len(feats_var) == len(feats_val) == 2
    for fv, fp in zip(feats_var, feats_val):
        assert np.array_equal(fv.value, fp)


def test_param_count_is_function_of_widths():
    a = MLPDenoiser(2, [16, 16], 10, Rng(7))
    b = MLPDenoiser(2, [16, 16], 10, Rng(8))
    assert a.param_count == b.param_count
    in_dim = 2 + 1 + EMB_DIM
    expected = (in_dim * 16 + 16) + (16 * 16 + 16) + (16 * 2 + 2)
    assert a.param_count == expected


def test_backward_scalar_net_analytic():
    # 1-layer, 1-unit net on a fixed input: gradients match hand formulas.
    model = MLPDenoiser(1, [], 10, Rng(9))  # direct linear map
    # no hidden layers: out = x_aug @ W + b
    x = np.array([[2.0]])
    out, _ = model.forward(x, 10, record=True)
    target = np.array([[1.0]])
    d = out - target
    loss = (d * d).mean()
    grads = backward(loss)
    w, b = model.weights[0], model.biases[0]
    x_aug = np.concatenate([x, _t_features(10, 1, 10)], axis=1)
    resid = out.value - target
    assert np.allclose(grads[w], (x_aug.T @ (2 * resid)) / 1.0, rtol=1e-12)
    assert np.allclose(grads[b], 2 * resid.ravel(), rtol=1e-12)


def test_backward_zero_upstream_gives_zero_grads():
    model = MLPDenoiser(2, [4], 10, Rng(10))
    out, _ = model.forward(np.ones((3, 2)), 4, record=True)
    grads = backward(out, seed=np.zeros((3, 2)))
    for p in model.parameters():
        if p in grads:
            assert np.allclose(grads[p], 0.0)


def test_backward_matches_fd_for_all_params():
    model = MLPDenoiser(2, [5, 4, 3], 20, Rng(11))
    x = Rng(12).normal((6, 2))
    target = Rng(13).normal((6, 2))

    def loss_fn():
        out, _ = model.forward(x, 9, record=True)
        d = out - target
        return (d * d).mean()

    grads = backward(loss_fn())
    for p in model.parameters():
        base = p.value.copy()

        def f(pv, p=p):
            p.value = pv
            out = model(x, 9)
            p.value = base
            return float(np.mean((out - target) ** 2))

        assert rel_err(grads[p], central_difference(f, base)) < 1e-5


def test_adam_zero_grads_keep_params():
    model = MLPDenoiser(2, [4], 10, Rng(14))
    params = model.parameters()
    state = AdamState.for_params(params)
    before = [p.value.copy() for p in params]
    adam_step(params, [np.zeros_like(p.value) for p in params], state, lr=0.1)
    for p, b in zip(params, before):
        assert np.array_equal(p.value, b)
    assert state.step == 1


def test_adam_descends_on_quadratic():
    x = Var(np.array(1.0))
    state = AdamState.for_params([x])
    adam_step([x], [2.0 * x.value], state, lr=0.1)
    assert float(x.value) < 1.0


def test_adam_converges_on_quadratic():
    # minimize (x - 3)^2 for 200 steps
    x = Var(np.array(0.0))
    state = AdamState.for_params([x])
    for _ in range(200):
        adam_step([x], [2.0 * (x.value - 3.0)], state, lr=0.1)
    assert abs(float(x.value) - 3.0) < 1e-3


def test_checkpoint_roundtrip(tmp_path):
    model = MLPDenoiser(3, [7, 5], 40, Rng(15))
    path = tmp_path / "ckpt.json"
    save_checkpoint(model, path, seed_provenance={"seed": 15})
    loaded = load_checkpoint(path)
    assert loaded.widths == model.widths
    assert loaded.data_dim == model.data_dim
    assert loaded.total_steps == model.total_steps
    x = Rng(16).normal((4, 3))
    assert np.array_equal(loaded(x, 11), model(x, 11))


def test_linear_map_shapes_and_identity():
    reg = LinearMap.identity(4)
    f = Rng(17).normal((6, 4))
    assert np.allclose(reg.apply(f).value, f)
    reg2 = LinearMap.init(Rng(18), 5, 3)
    assert reg2.apply(np.ones((2, 3))).shape == (2, 5)
    with pytest.raises(ValueError):
        reg2.apply(np.ones((2, 4)))


def test_wider_nets_fit_better_across_seeds():
    # capacity sanity: on a fixed tiny denoising task, the wide net reaches
    # lower training loss than the narrow one after the same steps (checked
    # across 3 seeds to keep it statistical, not anecdotal).
    from liftplace.datasets import make_dataset
    from liftplace.diffusion import linear_schedule

    data = make_dataset("gaussians8", 256, Rng(100).child("data"))
    sched = linear_schedule(20, 1e-4, 0.2)
    wins = 0
    for seed in (0, 1, 2):
        losses = {}
        for name, widths in [("wide", [64, 64]), ("narrow", [2])]:
            rng = Rng(seed).child(name)
            model = MLPDenoiser(2, widths, 20, rng.child("init"))
            params = model.parameters()
            state = AdamState.for_params(params)
            brng = rng.child("batches")
            final = None
            for _ in range(200):
                idx = brng.integers(0, len(data), 64)
                x0 = data.samples[idx]
                tvec = brng.integers(1, 21, 64)
                eps = brng.normal((64, 2))
                abar = sched.alpha_bars[tvec - 1][:, None]
                x_t = np.sqrt(abar) * x0 + np.sqrt(1 - abar) * eps
                out, _ = model.forward(x_t, tvec, record=True)
                d = eps - out
                loss = (d * d).mean()
                grads = backward(loss)
                adam_step(params, [grads.get(p, np.zeros_like(p.value)) for p in params], state, lr=1e-2)
                final = float(loss.value)
            losses[name] = final
        wins += losses["wide"] <= losses["narrow"]
    assert wins >= 2
