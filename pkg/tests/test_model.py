import numpy as np
import pytest
from hypothesis import given, strategies as st

from augarena.model import (
    Arch,
    Batch,
    DivergenceError,
    Hyperparams,
    ModelParams,
    Normalizer,
    accuracy,
    epoch_boundary,
    forward_loss,
    grad_check,
    init_params,
    load_checkpoint,
    logits,
    loss_and_grad,
    lr_at,
    save_checkpoint,
    sgd_step,
    warmup_epochs,
)


def random_instance(seed):
    """A tiny random network and batch; biases nonzero so every path is exercised."""
    rng = np.random.default_rng([99, seed])
    arch = Arch(
        side=int(rng.choice([4, 8])),
        channels=(int(rng.integers(1, 4)), int(rng.integers(1, 4))),
        n_classes=int(rng.integers(2, 5)),
    )
    params = init_params(arch, rng)
    for name in ("b1", "b2", "b3"):
        params.weights[name] = rng.normal(0, 0.1, params.weights[name].shape)
    n = int(rng.integers(1, 4))
    batch = Batch(rng.normal(size=(n, arch.side, arch.side, 3)), rng.integers(0, arch.n_classes, n))
    return params, batch, float(rng.choice([0.0, 5e-4]))


def reference_forward(params, x):
    """Direct loop convolution and pooling, independent of the im2col path."""
    p = params.weights

    def conv(a, w, b):
        n, h, wd, c = a.shape
        w = w.reshape(3, 3, c, -1)
        ap = np.pad(a, ((0, 0), (1, 1), (1, 1), (0, 0)))
        out = np.zeros((n, h, wd, w.shape[-1]))
        for dy in range(3):
            for dx in range(3):
                out += np.tensordot(ap[:, dy:dy + h, dx:dx + wd, :], w[dy, dx], axes=([3], [0]))
        return out + b

    def pool(a):
        n, h, w, c = a.shape
        return a.reshape(n, h // 2, 2, w // 2, 2, c).max(axis=(2, 4))

    a = pool(np.maximum(conv(x, p["w1"], p["b1"]), 0))
    a = pool(np.maximum(conv(a, p["w2"], p["b2"]), 0))
    return a.reshape(len(x), -1) @ p["w3"] + p["b3"]


def test_forward_matches_reference():
    for seed in range(5):
        params, batch, _ = random_instance(seed)
        np.testing.assert_allclose(logits(params, batch.x), reference_forward(params, batch.x), rtol=1e-12, atol=1e-12)
    rng = np.random.default_rng(0)
    params = init_params(Arch(), rng)
    x = rng.normal(size=(3, 16, 16, 3))
    np.testing.assert_allclose(logits(params, x), reference_forward(params, x), rtol=1e-10, atol=1e-12)


def test_loss_values():
    params, batch, _ = random_instance(1)
    out = reference_forward(params, batch.x)
    lse = np.log(np.exp(out).sum(axis=1))
    want = lse - out[np.arange(len(batch.y)), batch.y]
    stats = forward_loss(params, batch)
    np.testing.assert_allclose(stats.per_sample_losses, want, rtol=1e-12)
    assert stats.mean_loss == pytest.approx(want.mean())
    assert stats.correct_count == int((out.argmax(1) == batch.y).sum())


def test_grad_check_100_instances():
    worst = 0.0
    for seed in range(100):
        params, batch, wd = random_instance(seed)
        report = grad_check(params, batch, h=1e-5, tol=1e-6, weight_decay=wd)
        assert report.n_checked > 0
        worst = max(worst, report.max_rel_error)
    assert worst < 1e-6, worst


def test_grad_check_catches_wrong_gradient(monkeypatch):
    import augarena.model as M

    params, batch, _ = random_instance(3)
    real = M.loss_and_grad

    def broken(p, b, wd=0.0):
        stats, g = real(p, b, wd)
        g["w2"] = g["w2"] * 1.001
        return stats, g

    monkeypatch.setattr(M, "loss_and_grad", broken)
    assert not grad_check(params, batch).passed


def test_weight_decay_gradient_covers_biases():
    params, batch, _ = random_instance(4)
    _, g0 = loss_and_grad(params, batch, 0.0)
    _, g1 = loss_and_grad(params, batch, 0.01)
    for name in g0:
        np.testing.assert_allclose(g1[name] - g0[name], 0.01 * params.weights[name], atol=1e-15)


def test_nesterov_step_formula():
    params, batch, _ = random_instance(2)
    _, g = loss_and_grad(params, batch)
    params.velocity = {k: np.full_like(v, 0.01) for k, v in params.weights.items()}
    new = sgd_step(params, g, lr=0.1, momentum=0.9)
    for k in g:
        v = 0.9 * 0.01 - 0.1 * g[k]
        np.testing.assert_allclose(new.velocity[k], v)
        np.testing.assert_allclose(new.weights[k], params.weights[k] + 0.9 * v - 0.1 * g[k])
    assert new.weights["w1"] is not params.weights["w1"]


def test_sgd_step_divergence():
    params, batch, _ = random_instance(2)
    _, g = loss_and_grad(params, batch)
    g["w3"] = g["w3"] * np.inf
    with pytest.raises(DivergenceError):
        sgd_step(params, g, lr=0.1)


def test_training_reduces_loss():
    rng = np.random.default_rng(0)
    arch = Arch(side=8, channels=(4, 8), n_classes=2)
    params = init_params(arch, rng)
    x = rng.normal(size=(32, 8, 8, 3))
    y = (x[:, :, :, 0].mean(axis=(1, 2)) > 0).astype(int)
    batch = Batch(x, y)
    before = forward_loss(params, batch).mean_loss
    for _ in range(60):
        _, g = loss_and_grad(params, batch, 5e-4)
        params = sgd_step(params, g, lr=0.05)
    assert forward_loss(params, batch).mean_loss < 0.5 * before
    assert accuracy(params, x, y, chunk=7) > 0.9


def test_lr_schedule_200():
    hp = Hyperparams()
    assert warmup_epochs(hp) == 10
    assert [epoch_boundary(m, 200) for m in hp.decay_milestones] == [50, 100, 140]
    assert lr_at(hp, 0) == 0.1 and lr_at(hp, 49) == 0.1
    assert lr_at(hp, 50) == pytest.approx(0.02)
    assert lr_at(hp, 100) == pytest.approx(0.004)
    assert lr_at(hp, 140) == pytest.approx(0.0008)
    assert lr_at(hp, 199) == pytest.approx(0.0008)
    with pytest.raises(ValueError):
        lr_at(hp, 200)


def test_lr_schedule_16():
    hp = Hyperparams(total_epochs=16)
    assert warmup_epochs(hp) == 1
    rates = [lr_at(hp, e) for e in range(16)]
    assert [sum(r < 0.1 * 0.2 ** k * 1.0001 for r in rates) for k in (1, 2, 3)] == [12, 8, 4]


@given(st.floats(0.01, 0.99), st.integers(1, 500))
def test_epoch_boundary_is_ceiling(frac, total):
    b = epoch_boundary(frac, total)
    assert b - 1 < frac * total + 1e-6 and b >= frac * total - 1e-6


@pytest.mark.parametrize("kwargs", [
    {"decay_milestones": (0.5, 0.25)},
    {"decay_milestones": (0.0, 0.5)},
    {"base_lr": 0.0},
    {"batch_size": 0},
    {"warmup_epochs_fraction": 1.0},
])
def test_hyperparams_validation(kwargs):
    with pytest.raises(ValueError):
        Hyperparams(**kwargs)


def test_arch_and_shapes_validation():
    with pytest.raises(ValueError):
        Arch(side=10)
    arch = Arch()
    params = init_params(arch, np.random.default_rng(0))
    bad = dict(params.weights)
    bad["w2"] = np.zeros((3, 3))
    with pytest.raises(ValueError):
        ModelParams(arch, bad)
    with pytest.raises(ValueError):
        forward_loss(params, Batch(np.zeros((1, 8, 8, 3)), [0]))
    with pytest.raises(ValueError):
        forward_loss(params, Batch(np.zeros((1, 16, 16, 3)), [7]))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    params = init_params(Arch(side=8, channels=(3, 5), n_classes=6), rng)
    norm = Normalizer.fit(rng.integers(0, 256, (4, 8, 8, 3), dtype=np.uint8))
    save_checkpoint(tmp_path / "m.ckpt", params, norm)
    back, norm2 = load_checkpoint(tmp_path / "m.ckpt")
    assert back.arch == params.arch
    for k in params.weights:
        np.testing.assert_array_equal(back.weights[k], params.weights[k])
    np.testing.assert_array_equal(norm2.mean, norm.mean)
    np.testing.assert_array_equal(norm2.std, norm.std)
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(b"AUGCKPT\x00")
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "x.ckpt").write_bytes(b"garbage")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.ckpt")


def test_normalizer():
    imgs = np.stack([np.full((8, 8, 3), v, np.uint8) for v in (0, 255)])
    norm = Normalizer.fit(imgs)
    out = norm(imgs)
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=(0, 1, 2)), 1)
    flat = Normalizer.fit(np.full((2, 8, 8, 3), 9, np.uint8))
    assert np.isfinite(flat(np.zeros((1, 8, 8, 3), np.uint8))).all()
