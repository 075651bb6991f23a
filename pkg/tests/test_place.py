import numpy as np
import pytest

from helpers import central_difference, rel_err
from liftplace.autodiff import Var, backward
from liftplace.kd_losses import WeightScheduler, adaptive_weight, coarse_loss, fine_loss, lift_loss, scheduled_weight
from liftplace.numerics import Rng
from liftplace.place import (
    ErrorMap,
    IndivisibleGroupSizeError,
    error_map,
    export_error_map,
    load_error_map,
    partition,
    place_loss,
)
from liftplace.regression import DegenerateVarianceError, ols_fit

ADAPTIVE = WeightScheduler.adaptive()


def reference_place_loss(eps_t, eps_s, k, w_policy, iteration, relaxed_l2=False):
    """Independent oracle: materialize every group explicitly, call the
    scalar-pair fitting loss per group, average."""
    emap = np.abs(eps_t - eps_s)
    c = emap.shape[0]
    losses = []
    for ch in range(c):
        order = np.argsort(emap[ch].ravel(), kind="stable")
        flat_t = eps_t[ch].ravel()[order]
        flat_s = eps_s[ch].ravel()[order]
        for g in range(flat_t.size // k):
            tg = flat_t[g * k : (g + 1) * k]
            sg = flat_s[g * k : (g + 1) * k]
            try:
                coeffs = ols_fit(tg, sg)
                lc = coarse_loss(coeffs, relaxed_l2)
                if w_policy.kind == "adaptive":
                    w = adaptive_weight(lc)
                else:
                    w = scheduled_weight(w_policy, iteration)
                losses.append(float(lift_loss(tg, sg, w=w, relaxed_l2=relaxed_l2)[0]))
            except DegenerateVarianceError as err:
                coeffs = err.fallback
                lc = coarse_loss(coeffs, relaxed_l2)
                w = adaptive_weight(lc) if w_policy.kind == "adaptive" else scheduled_weight(w_policy, iteration)
                losses.append(lc + w * fine_loss(tg, sg, coeffs))
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# error map
# ---------------------------------------------------------------------------

def test_error_map_values():
    rng = Rng(0)
    t = rng.normal((2, 3, 3))
    assert np.array_equal(error_map(t, t).values, np.zeros_like(t))
    # integer-valued tensors keep the +-1 differences exact in floats
    base = np.round(rng.normal((2, 3, 3)) * 3)
    signs = np.where(rng.normal((2, 3, 3)) > 0, 1.0, -1.0)
    assert np.array_equal(error_map(base + signs, base).values, np.ones_like(base))


def test_error_map_matches_loop_oracle():
    rng = Rng(1)
    t, s = rng.normal((3, 4, 4)), rng.normal((3, 4, 4))
    em = error_map(t, s).values
    for idx in np.ndindex(*t.shape):
        assert em[idx] == abs(t[idx] - s[idx])


def test_error_map_shape_checks():
    with pytest.raises(ValueError):
        error_map(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        error_map(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))


# ---------------------------------------------------------------------------
# partition
# ---------------------------------------------------------------------------

def test_partition_single_group_per_channel():
    em = ErrorMap(np.abs(Rng(2).normal((3, 2, 2))))
    part = partition(em, 4)
    assert part.groups_per_channel == 1
    for c in range(3):
        assert sorted(part.group_indices(c, 0)) == [0, 1, 2, 3]


def test_partition_presorted_errors_chunk_in_order():
    em = ErrorMap(np.arange(16.0).reshape(1, 4, 4))
    part = partition(em, 4)
    for g in range(4):
        assert list(part.group_indices(0, g)) == [4 * g, 4 * g + 1, 4 * g + 2, 4 * g + 3]


def test_partition_ties_break_by_flat_index():
    em = ErrorMap(np.ones((2, 4, 2)))
    part = partition(em, 4)
    assert list(part.index_map[0]) == list(range(8))
    assert list(part.index_map[1]) == list(range(8))


def test_partition_is_bijection_with_sorted_boundaries():
    rng = Rng(3)
    for shape, k in [((1, 4, 4), 2), ((3, 8, 8), 16), ((2, 16, 16), 4)]:
        em = ErrorMap(np.abs(rng.normal(shape)))
        part = partition(em, k)
        hw = shape[1] * shape[2]
        for c in range(shape[0]):
            assert sorted(part.index_map[c]) == list(range(hw))
            flat = em.values[c].ravel()
            for g in range(part.groups_per_channel - 1):
                cur = flat[part.group_indices(c, g)]
                nxt = flat[part.group_indices(c, g + 1)]
                assert cur.max() <= nxt.min()


def test_partition_errors():
    em = ErrorMap(np.ones((1, 3, 3)))
    with pytest.raises(IndivisibleGroupSizeError):
        partition(em, 4)
    with pytest.raises(ValueError):
        partition(em, 1)


# ---------------------------------------------------------------------------
# place loss
# ---------------------------------------------------------------------------

def test_place_single_group_reduces_to_channelwise_lift():
    rng = Rng(4)
    t, s = rng.normal((3, 4, 4)), rng.normal((3, 4, 4))
    loss, groups = place_loss(t, s, 16, ADAPTIVE, 0)
    per_channel = []
    for c in range(3):
        coeffs = ols_fit(t[c], s[c])
        w = adaptive_weight(coarse_loss(coeffs))
        per_channel.append(float(lift_loss(t[c], s[c], w=w)[0]))
    assert loss == pytest.approx(np.mean(per_channel), abs=1e-12)
    assert len(groups) == 3


def test_place_identical_inputs_zero_loss_with_degenerate_flags():
    rng = Rng(5)
    x = rng.normal((2, 4, 4))
    loss, groups = place_loss(x, x, 4, ADAPTIVE, 0)
    assert loss == pytest.approx(0.0, abs=1e-20)
    # identical pair: every fit is exactly the identity, no fallbacks needed
    assert all(g.degenerate_fallbacks == 0 for g in groups)
    # constant channels do trip the fallback, still at zero loss
    const = np.ones((1, 2, 2))
    loss2, groups2 = place_loss(const, const, 4, ADAPTIVE, 0)
    assert loss2 == pytest.approx(0.0, abs=1e-20)
    assert sum(g.degenerate_fallbacks for g in groups2) == 1


def test_place_matches_gather_then_loss_oracle():
    rng = Rng(6)
    for shape, k in [((1, 4, 4), 2), ((1, 4, 4), 4), ((3, 8, 8), 16), ((2, 16, 16), 4), ((3, 8, 8), 2)]:
        t = rng.normal(shape)
        s = rng.normal(shape) + 0.5 * t
        loss, groups = place_loss(t, s, k, ADAPTIVE, 0)
        ref = reference_place_loss(t, s, k, ADAPTIVE, 0)
        assert loss == pytest.approx(ref, rel=1e-12, abs=1e-13)
        assert len(groups) == shape[0] * (shape[1] * shape[2] // k)


def test_place_matches_oracle_under_fixed_and_cosine_policies():
    rng = Rng(7)
    t, s = rng.normal((2, 4, 4)), rng.normal((2, 4, 4))
    for policy, it in [(WeightScheduler.fixed(1.0), 0), (WeightScheduler.cosine(10), 5)]:
        loss, _ = place_loss(t, s, 4, policy, it)
        assert loss == pytest.approx(reference_place_loss(t, s, 4, policy, it), rel=1e-12)


def test_place_group_sizes_exact_and_breakdowns_consistent():
    rng = Rng(8)
    t, s = rng.normal((3, 8, 8)), rng.normal((3, 8, 8))
    loss, groups = place_loss(t, s, 16, ADAPTIVE, 7)
    assert len(groups) == 3 * 4
    for g in groups:
        assert g.step == 7
        assert g.total == g.l_lift
        assert g.l_lift == pytest.approx(g.l_coarse + g.w * g.l_fine, rel=1e-12, abs=1e-15)
    assert loss == pytest.approx(np.mean([g.l_lift for g in groups]), rel=1e-12)


def test_place_permutation_invariance():
    rng = Rng(9)
    t, s = rng.normal((2, 4, 4)), rng.normal((2, 4, 4))
    loss, _ = place_loss(t, s, 4, ADAPTIVE, 0)
    perm = rng._gen.permutation(16)
    tp = t.reshape(2, 16)[:, perm].reshape(2, 4, 4)
    sp = s.reshape(2, 16)[:, perm].reshape(2, 4, 4)
    loss_p, _ = place_loss(tp, sp, 4, ADAPTIVE, 0)
    assert loss_p == pytest.approx(loss, rel=1e-12)


def test_place_gradient_matches_frozen_fd():
    # Frozen-partition, stop-gradient-coefficient contract: the reference
    # freezes groups, coefficients, and weights at the base point.
    rng = Rng(10)
    t = rng.normal((2, 4, 4))
    s_val = rng.normal((2, 4, 4)) + 0.3 * t
    s = Var(s_val)
    loss, groups = place_loss(t, s, 4, ADAPTIVE, 0)
    g = backward(loss)[s]

    emap = np.abs(t - s_val)
    orders = [np.argsort(emap[c].ravel(), kind="stable") for c in range(2)]
    frozen = []
    for c in range(2):
        for gi in range(4):
            idx = orders[c][gi * 4 : (gi + 1) * 4]
            coeffs = ols_fit(t[c].ravel()[idx], s_val[c].ravel()[idx])
            w = adaptive_weight(coarse_loss(coeffs))
            frozen.append((c, idx, coeffs, w))

    def f(x):
        vals = []
        for c, idx, coeffs, w in frozen:
            tg = t[c].ravel()[idx]
            sg = x[c].ravel()[idx]
            vals.append(coarse_loss(coeffs) + w * fine_loss(tg, sg, coeffs))
        return float(np.mean(vals))

    assert rel_err(g, central_difference(f, s_val)) < 1e-5


def test_place_pooled_weight_variant():
    rng = Rng(11)
    t, s = rng.normal((1, 4, 4)), rng.normal((1, 4, 4))
    loss, groups = place_loss(t, s, 4, ADAPTIVE, 0, pooled_w=True)
    pooled = adaptive_weight(float(np.mean([g.l_coarse for g in groups])))
    assert all(g.w == pytest.approx(pooled) for g in groups)


def test_place_input_validation():
    t = np.zeros((1, 2, 2))
    with pytest.raises(ValueError):
        place_loss(t, np.zeros((1, 2, 3)), 2, ADAPTIVE, 0)
    with pytest.raises(IndivisibleGroupSizeError):
        place_loss(t, t, 3, ADAPTIVE, 0)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def test_export_zero_map(tmp_path):
    path = tmp_path / "zeros.json"
    export_error_map(ErrorMap(np.zeros((2, 2, 2))), path)
    loaded = load_error_map(path)
    assert np.array_equal(loaded.values, np.zeros((2, 2, 2)))


def test_export_roundtrip_bit_exact_and_schema(tmp_path):
    import json

    rng = Rng(12)
    em = error_map(rng.normal((3, 8, 8)), rng.normal((3, 8, 8)))
    path = tmp_path / "em.json"
    export_error_map(em, path)
    assert np.array_equal(load_error_map(path).values, em.values)
    obj = json.loads(path.read_text())
    assert set(obj) == {"shape", "data", "channel_stats"}
    assert obj["shape"] == [3, 8, 8]
    assert len(obj["data"]) == 3 * 8 * 8
    assert len(obj["channel_stats"]) == 3
    for c, st in enumerate(obj["channel_stats"]):
        assert st["min"] == em.values[c].min()
        assert st["max"] == em.values[c].max()
