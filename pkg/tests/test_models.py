import numpy as np
import pytest

from gatrans import tensor as T
from gatrans.models import (Discriminator, DiscriminatorConfig, GtBlock, GTNet,
                            GtnetConfig, PatchMerge, patch_partition_raw,
                            patch_unpartition, spatial_to_tokens,
                            tokens_to_spatial)
from gatrans.tensor import Tensor, grad_check


# -- patch partition ----------------------------------------------------------

def test_partition_p1_is_channel_flatten():
    img = np.arange(2 * 3 * 3, dtype=np.float64).reshape(2, 3, 3)
    tokens = patch_partition_raw(Tensor(img), 1).data
    assert tokens.shape == (9, 2)
    assert np.array_equal(tokens, img.reshape(2, 9).T)


def test_partition_round_trip_exact():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((1, 4, 4))
    tokens = patch_partition_raw(Tensor(img), 2).data
    assert tokens.shape == (4, 4)
    assert np.array_equal(patch_unpartition(tokens, 1, 4, 4, 2), img)


def test_partition_matches_index_oracle():
    rng = np.random.default_rng(1)
    img = rng.standard_normal((3, 8, 8))
    p = 4
    tokens = patch_partition_raw(Tensor(img), p).data
    for gy in range(2):
        for gx in range(2):
            t = tokens[gy * 2 + gx]
            for c in range(3):
                for dy in range(p):
                    for dx in range(p):
                        feat = c * p * p + dy * p + dx
                        assert t[feat] == img[c, gy * p + dy, gx * p + dx]


def test_partition_reports_required_padding():
    with pytest.raises(T.ShapeError, match=r"\(1, 3\)"):
        patch_partition_raw(Tensor(np.zeros((1, 7, 5))), 4)


def test_token_spatial_round_trip():
    rng = np.random.default_rng(2)
    tokens = rng.standard_normal((12, 5))
    back = spatial_to_tokens(tokens_to_spatial(Tensor(tokens), 3, 4)).data
    assert np.array_equal(back, tokens)


# -- transformer block --------------------------------------------------------

def block(c=4, d=2, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return GtBlock(c, d, c, 4, rng, seed=seed, dtype=dtype)


def test_gt_block_zeroed_branches_is_identity():
    b = block()
    b.proj.w.data[:] = 0
    b.proj.b.data[:] = 0
    b.fc2.w.data[:] = 0
    b.fc2.b.data[:] = 0
    x = np.random.default_rng(3).standard_normal((10, 4))
    assert np.array_equal(b(Tensor(x)).data, x)


def test_gt_block_preserves_shape():
    b = block()
    for n in (1, 5, 17):
        x = np.random.default_rng(n).standard_normal((n, 4))
        assert b(Tensor(x)).shape == (n, 4)


def test_gt_block_gradient():
    b = block(seed=4)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 4))
    w = rng.standard_normal((6, 4))
    assert grad_check(lambda t: (b(t) * Tensor(w)).sum(), x) < 1e-4


# -- patch merge --------------------------------------------------------------

def test_patch_merge_constant_grid_stays_constant():
    rng = np.random.default_rng(6)
    m = PatchMerge(3, rng, dtype=np.float64)
    tokens = np.tile(np.array([1.0, -2.0, 0.5]), (16, 1))
    out = m(Tensor(tokens), 4, 4).data
    assert out.shape == (4, 6)
    assert np.abs(out - out[0]).max() == 0.0


def test_patch_merge_rejects_odd_grid():
    m = PatchMerge(2, np.random.default_rng(0))
    with pytest.raises(T.ShapeError, match="even"):
        m(Tensor(np.zeros((15, 2))), 5, 3)


def test_patch_merge_matches_gather_oracle():
    rng = np.random.default_rng(7)
    c = 3
    m = PatchMerge(c, rng, dtype=np.float64)
    tokens = rng.standard_normal((16, c))
    out = m(Tensor(tokens), 4, 4).data
    grid = tokens.reshape(4, 4, c)
    for i in range(2):
        for j in range(2):
            neigh = np.concatenate([grid[2 * i, 2 * j], grid[2 * i, 2 * j + 1],
                                    grid[2 * i + 1, 2 * j], grid[2 * i + 1, 2 * j + 1]])
            expect = m.reduce.w.data @ neigh + m.reduce.b.data
            assert np.abs(out[i * 2 + j] - expect).max() < 1e-12


# -- full generator -----------------------------------------------------------

@pytest.fixture(scope="module")
def toy_net():
    return GTNet(GtnetConfig(), seed=0)


@pytest.mark.parametrize("size", [32, 64, 96, 128])
def test_forward_preserves_resolution(toy_net, size):
    img = np.random.default_rng(size).random((3, size, size)).astype(np.float32)
    out = toy_net(Tensor(img))
    assert out.shape == (5, size, size)
    assert np.isfinite(out.data).all()


def test_forward_rejects_indivisible_input(toy_net):
    with pytest.raises(T.ShapeError, match="divisible by 16"):
        toy_net(Tensor(np.zeros((3, 40, 40), dtype=np.float32)))


def test_forward_rejects_wrong_channel_count(toy_net):
    with pytest.raises(T.ShapeError, match="channels"):
        toy_net(Tensor(np.zeros((4, 32, 32), dtype=np.float32)))


def test_zero_head_gives_uniform_class_distribution():
    net = GTNet(GtnetConfig(), seed=1)
    net.head.w.data[:] = 0
    net.head.b.data[:] = 0
    img = np.random.default_rng(8).random((3, 32, 32)).astype(np.float32)
    logits = net(Tensor(img)).data
    assert np.abs(logits).max() == 0.0
    probs = np.exp(logits) / np.exp(logits).sum(axis=0)
    assert np.allclose(probs, 0.2)


def _linear_count(i, o):
    return o * i + o


def _conv_count(i, o, k):
    return o * i * k * k + o


def test_param_count_matches_closed_form(toy_net):
    cfg = toy_net.config
    p = cfg.patch_size
    widths = cfg.stage_widths
    d = cfg.resolved_d_buckets()
    total = _linear_count(cfg.in_channels * p * p, widths[0])
    for s, c in enumerate(widths):
        total += 2 * _conv_count(c, c, 3)                  # residual block
        per_block = (4 * (c * c + c)                       # q, k, v, l maps
                     + (c * c + c) + (c + 1)               # ASS two-layer head
                     + 2 * 2 * c                           # both layer norms
                     + _linear_count(c, c)                 # attention out proj
                     + _linear_count(c, 4 * c)
                     + _linear_count(4 * c, c))
        total += cfg.stage_depths[s] * per_block
        if s + 1 < len(widths):
            total += _linear_count(4 * c, 2 * c)           # patch merge
    for s in range(len(widths) - 1, 0, -1):
        total += widths[s - 1] * widths[s] * 4 + widths[s - 1]   # 2x2 up conv
        total += _conv_count(2 * widths[s - 1], widths[s - 1], 1)
    total += widths[0] * widths[0] * p * p + widths[0]     # final expand conv
    total += _conv_count(widths[0], cfg.num_classes, 1)
    assert toy_net.param_count == total
    assert total < 2_000_000


def test_same_seed_reproduces_initial_weights():
    a = dict(GTNet(GtnetConfig(), seed=7).named_parameters())
    b = dict(GTNet(GtnetConfig(), seed=7).named_parameters())
    c = dict(GTNet(GtnetConfig(), seed=8).named_parameters())
    assert a.keys() == b.keys()
    for name in a:
        assert np.array_equal(a[name].data, b[name].data), name
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a)


def test_derived_bucket_counts_scale_with_stage():
    cfg = GtnetConfig()
    d = cfg.resolved_d_buckets()
    # 64/4 = 16x16 = 256 tokens at stage 0, quartered per merge
    assert d == (256 // 16, 64 // 16, 16 // 16)


# -- discriminator ------------------------------------------------------------

@pytest.fixture(scope="module")
def disc():
    return Discriminator(DiscriminatorConfig(), seed=0)


def test_discriminator_output_strictly_inside_unit_interval(disc):
    rng = np.random.default_rng(9)
    for trial in range(5):
        cm = rng.random((5, 32, 32)).astype(np.float32)
        img = rng.random((3, 32, 32)).astype(np.float32)
        out = float(disc(Tensor(cm), Tensor(img)).data)
        assert 0.0 < out < 1.0


def test_discriminator_zero_final_layer_outputs_half():
    d = Discriminator(DiscriminatorConfig(), seed=1)
    d.convs[-1].w.data[:] = 0
    d.convs[-1].b.data[:] = 0
    out = d(Tensor(np.random.default_rng(10).random((5, 32, 32)).astype(np.float32)),
            Tensor(np.random.default_rng(11).random((3, 32, 32)).astype(np.float32)))
    assert float(out.data) == 0.5


def test_discriminator_grad_reaches_both_inputs(disc):
    rng = np.random.default_rng(12)
    cm = Tensor(rng.random((5, 32, 32)).astype(np.float32), requires_grad=True)
    img = Tensor(rng.random((3, 32, 32)).astype(np.float32), requires_grad=True)
    disc(cm, img).backward()
    assert cm.grad is not None and np.abs(cm.grad).max() > 0
    assert img.grad is not None and np.abs(img.grad).max() > 0


def test_discriminator_rejects_channel_mismatch(disc):
    with pytest.raises(T.ShapeError, match="channels"):
        disc(Tensor(np.zeros((4, 32, 32), dtype=np.float32)),
             Tensor(np.zeros((3, 32, 32), dtype=np.float32)))


def test_discriminator_rejects_spatial_mismatch(disc):
    with pytest.raises(T.ShapeError, match="spatial"):
        disc(Tensor(np.zeros((5, 32, 32), dtype=np.float32)),
             Tensor(np.zeros((3, 16, 16), dtype=np.float32)))
