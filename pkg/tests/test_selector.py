import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augarena import policyspace as ps
from augarena.model import Arch, Normalizer, forward_loss, Batch, init_params
from augarena.imgkernels import apply_policy, StochasticParams
from augarena.selector import (
    CONVERGENCE_STEPS_EASY,
    CONVERGENCE_STEPS_GAP_0_1,
    EASY,
    ControllerState,
    LossTable,
    StrategyKind,
    controller_sample,
    controller_update,
    curriculum_policies,
    easiest_half,
    eval_loss_table,
    hard_policies,
    rank_policies,
    schedule_for,
    table_draws,
    trueadv_select,
)

# ---------------------------------------------------------------- oracles


def brute_argmax(ids, losses):
    best_i = None
    for i in range(len(ids)):
        if best_i is None or losses[i] > losses[best_i] or (losses[i] == losses[best_i] and ids[i] < ids[best_i]):
            best_i = i
    return int(ids[best_i])


def brute_rank(ids, losses):
    return [int(p) for _, p in sorted(zip(losses, ids), key=lambda t: (-t[0], t[1]))]


def random_table(rng, ties: bool):
    n = int(rng.integers(1, 60))
    ids = rng.choice(5625, n, replace=False)
    if ties:
        losses = rng.integers(0, 4, n).astype(float) * 0.5
    else:
        losses = rng.random(n) * 3
    return LossTable(ids, losses, 8)


def test_trueadv_and_rank_match_bruteforce():
    rng = np.random.default_rng(11)
    for i in range(1000):
        t = random_table(rng, ties=i % 2 == 0)
        assert trueadv_select(t) == brute_argmax(t.policy_ids, t.mean_losses)
        assert list(rank_policies(t)) == brute_rank(t.policy_ids, t.mean_losses)


def test_tie_goes_to_lowest_id():
    t = LossTable([900, 17, 4000, 3], [2.0, 2.0, 1.0, 0.5], 4)
    assert trueadv_select(t) == 17
    assert list(rank_policies(t)) == [17, 900, 4000, 3]
    assert hard_policies(t, 2) == [17, 900]
    assert list(easiest_half(t)) == [4000, 3]


def test_easiest_half_sizes():
    rng = np.random.default_rng(0)
    t = LossTable(rng.choice(5625, 500, replace=False), rng.random(500), 4)
    half = easiest_half(t)
    assert len(half) == 250
    assert t.mean_losses[np.isin(t.policy_ids, half)].max() <= np.sort(t.mean_losses)[249]
    t5 = LossTable([1, 2, 3, 4, 5], [5, 4, 3, 2, 1], 1)
    assert list(easiest_half(t5)) == [3, 4, 5]


@pytest.mark.parametrize("ids,losses", [
    ([1, 1], [0.1, 0.2]),
    ([1, 2], [0.1]),
    ([1, 2], [0.1, float("nan")]),
    ([1, 2], [0.1, -1.0]),
])
def test_losstable_validation(ids, losses):
    with pytest.raises(ValueError):
        LossTable(ids, losses, 4)


def test_empty_table_rejected():
    t = LossTable([], [], 0)
    with pytest.raises(ValueError):
        trueadv_select(t)


def test_losstable_csv_roundtrip(tmp_path):
    t = LossTable([5, 100, 3], [0.25, 1.0 / 3, 2.0], 16, epoch=4)
    t.to_csv(tmp_path / "t.csv")
    back = LossTable.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.policy_ids, t.policy_ids)
    np.testing.assert_array_equal(back.mean_losses, t.mean_losses)
    assert (back.n_samples, back.epoch) == (16, 4)
    assert "ShearX@L0+ShearY@L0" in (tmp_path / "t.csv").read_text()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5624), st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.75])), min_size=1, max_size=40,
                unique_by=lambda t: t[0]))
def test_ranking_properties(rows):
    ids, losses = zip(*rows)
    t = LossTable(list(ids), list(losses), 1)
    ranked = rank_policies(t)
    assert sorted(ranked) == sorted(ids)
    assert ranked[0] == trueadv_select(t)
    lookup = dict(rows)
    for a, b in zip(ranked, ranked[1:]):
        assert lookup[a] > lookup[b] or (lookup[a] == lookup[b] and a < b)


# ------------------------------------------------------- loss-table evaluation


def test_eval_loss_table_matches_per_image_oracle():
    rng = np.random.default_rng(2)
    arch = Arch(side=8, channels=(4, 6), n_classes=3)
    params = init_params(arch, rng)
    images = rng.integers(0, 256, (5, 8, 8, 3), dtype=np.uint8)
    labels = rng.integers(0, 3, 5)
    norm = Normalizer.fit(images)
    policies = np.array([0, 77, 1733, 5624])
    table = eval_loss_table(params, images, labels, policies, norm, seed=9, epoch=3)
    for j, pid in enumerate(policies):
        signs, centers = table_draws(9, 3, int(pid), len(labels))
        pol = ps.decode(pid)
        total = 0.0
        for i in range(len(labels)):
            sp = tuple(StochasticParams(int(signs[i, s]), tuple(centers[i, s])) for s in range(2))
            aug = apply_policy(images[i], pol, sp)
            total += forward_loss(params, Batch(norm(aug[None]), labels[i:i + 1])).mean_loss
        assert table.mean_losses[j] == pytest.approx(total / len(labels), rel=1e-12)
    # thread count never changes the result for a fixed chunking
    serial = eval_loss_table(params, images, labels, policies, norm, seed=9, epoch=3, chunk_policies=1)
    threaded = eval_loss_table(params, images, labels, policies, norm, seed=9, epoch=3, threads=3, chunk_policies=1)
    np.testing.assert_array_equal(threaded.mean_losses, serial.mean_losses)
    np.testing.assert_allclose(serial.mean_losses, table.mean_losses, rtol=1e-12)
    assert table.epoch == 3 and table.n_samples == 5


# ------------------------------------------------------------------ curricula

ALL_CURRICULA = [StrategyKind.ADV_0EP, StrategyKind.ADV_100EP, StrategyKind.SMOOTH, StrategyKind.CYCLIC]


def test_strategy_parse():
    assert StrategyKind.parse("trueadv") is StrategyKind.TRUEADV
    assert StrategyKind.parse(StrategyKind.CYCLIC) is StrategyKind.CYCLIC
    assert StrategyKind.parse("1-adv-100ep") is StrategyKind.ADV_100EP
    with pytest.raises(ValueError):
        StrategyKind.parse("AutoAugment")
    assert StrategyKind.TRUEADV.needs_table and not StrategyKind.RANDOM.needs_table


def test_unknown_multiplicity():
    with pytest.raises(ValueError):
        schedule_for("Cyclic", 3)


def test_curriculum_policies_resolve_slots():
    rng = np.random.default_rng(0)
    t = LossTable(np.arange(10) * 7, np.linspace(0, 1, 10), 4)
    cyc = schedule_for("Cyclic", 2)
    got = curriculum_policies(cyc, 110, 200, t, rng)  # H1 + H2 phase
    assert got == [(1, 63), (2, 56)]
    got = curriculum_policies(cyc, 10, 200, t, rng)
    assert all(s == EASY and pid in easiest_half(t) for s, pid in got)
    # no table yet: easy draws come from the whole space, hard slots are an error
    assert curriculum_policies(cyc, 0, 200, None, rng)[0][0] == EASY
    with pytest.raises(ValueError):
        curriculum_policies(cyc, 80, 200, None, rng)


def test_easy_draws_uniform_over_half():
    rng = np.random.default_rng(1)
    t = LossTable(np.arange(20), np.arange(20, dtype=float), 4)
    sched = schedule_for("Smooth", 1)
    counts = np.bincount([curriculum_policies(sched, 0, 16, t, rng)[0][1] for _ in range(20000)], minlength=20)
    assert counts[10:].sum() == 0
    assert abs(counts[:10] - 2000).max() < 5 * math.sqrt(2000)


# ---------------------------------------------------------------- controller


def _run_controller(losses, seed, budget):
    ids = np.arange(len(losses)) * 11
    state = ControllerState(ids)
    rng = np.random.default_rng(seed)
    best = ids[int(np.argmax(losses))]
    for step in range(1, budget + 1):
        pid = controller_sample(state, rng)
        state = controller_update(state, pid, losses[int(np.flatnonzero(ids == pid)[0])])
        if state.prob_of(best) > 0.9:
            return step
    return None


def test_controller_converges_on_easy_table():
    for seed in range(10):
        assert _run_controller([1.0, 2.0, 3.0], seed, CONVERGENCE_STEPS_EASY) is not None


def test_controller_converges_on_gap_tables():
    rng = np.random.default_rng(77)
    for seed in range(10):
        n = int(rng.integers(3, 8))
        top = rng.uniform(0.1, 3.0)
        rest = rng.uniform(0.0, top - 0.1, n - 2)
        losses = rng.permutation(np.concatenate([[top, top - 0.1], rest]))
        assert _run_controller(list(losses), seed, CONVERGENCE_STEPS_GAP_0_1) is not None


def test_controller_update_direction():
    s = ControllerState(np.array([1, 2, 3]), baseline=1.0)
    up = controller_update(s, 2, 3.0)
    assert up.prob_of(2) > s.prob_of(2)
    down = controller_update(s, 2, 0.0)
    assert down.prob_of(2) < s.prob_of(2)
    assert abs(up.logits.mean()) < 1e-12
    assert up.baseline == pytest.approx(0.95 * 1.0 + 0.05 * 3.0)


def test_controller_first_update_only_seeds_baseline():
    s = ControllerState(np.array([4, 5]))
    s2 = controller_update(s, 4, 2.5)
    np.testing.assert_array_equal(s2.logits, s.logits)
    assert s2.baseline == 2.5


def test_controller_sample_matches_probs():
    s = ControllerState(np.array([10, 20, 30]), logits=np.log([0.2, 0.3, 0.5]))
    rng = np.random.default_rng(0)
    draws = np.array([controller_sample(s, rng) for _ in range(30000)])
    for pid, p in zip([10, 20, 30], [0.2, 0.3, 0.5]):
        assert abs((draws == pid).mean() - p) < 5 * math.sqrt(p * (1 - p) / 30000)


def test_controller_stays_finite_under_long_random_updates():
    rng = np.random.default_rng(5)
    s = ControllerState(np.arange(50))
    losses = rng.uniform(0, 20, 10**6)
    picks = rng.integers(0, 50, 10**6)
    for pid, loss in zip(picks[:10**6], losses):
        s = controller_update(s, int(pid), float(loss))
    assert np.isfinite(s.logits).all() and np.isfinite(s.probs).all()
    assert abs(s.probs.sum() - 1) < 1e-12


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -0.1])
def test_controller_rejects_bad_loss(bad):
    with pytest.raises(ValueError):
        controller_update(ControllerState(np.arange(3)), 0, bad)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=2, max_size=50))
def test_easiest_half_excludes_hardest(losses):
    if len(set(losses)) == 1:
        return
    t = LossTable(np.arange(len(losses)) * 3, losses, 1)
    assert trueadv_select(t) not in set(easiest_half(t).tolist())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_softmax_normalized(logits):
    from augarena.selector import softmax

    p = softmax(np.array(logits))
    assert abs(p.sum() - 1) < 1e-12 and (p >= 0).all()
