import numpy as np
import pytest

from onetracker.autograd import ShapeError, Tensor, finite_diff_check, ops
from onetracker.backbone import EncoderLayer, PatchEmbed, ViTBackbone, patchify
from onetracker.config import BackboneConfig, ConfigError, TrackerConfig
from onetracker.model import FoundationTracker


def _cfg(**kw):
    base = dict(dim=16, depth=2, heads=2, patch_size=8, template_size=32, search_size=64)
    base.update(kw)
    return BackboneConfig(**base)


def test_token_counts_full_size():
    cfg = TrackerConfig()
    assert cfg.backbone.n_template == 144
    assert cfg.backbone.n_search == 576


def test_patch_embed_toy_count(rng):
    pe = PatchEmbed(3, 16, 8, rng)
    assert pe(rng.random((3, 32, 32))).shape == (16, 16)


def test_patchify_row_major():
    img = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
    p = patchify(img, 2)
    # token 1 is the top-right patch; features are channel-major then row then column
    np.testing.assert_array_equal(p[1], [2, 3, 6, 7, 18, 19, 22, 23])


def test_patch_embed_errors(rng):
    pe = PatchEmbed(3, 16, 8, rng)
    with pytest.raises(ShapeError, match="divisible"):
        pe(rng.random((3, 30, 30)))
    with pytest.raises(ShapeError, match="channels"):
        pe(rng.random((1, 32, 32)))


def test_config_validation():
    with pytest.raises(ConfigError):
        _cfg(dim=15)
    with pytest.raises(ConfigError):
        _cfg(template_size=30)


def test_encoder_layer_shape(rng):
    layer = EncoderLayer(16, 2, 64, rng)
    assert layer(Tensor(rng.standard_normal((6, 16)))).shape == (6, 16)
    with pytest.raises(ShapeError):
        layer(Tensor(rng.standard_normal((6, 8))))


def test_zero_out_projections_give_identity(rng):
    bb = ViTBackbone(_cfg(depth=3), rng)
    for blk in bb.blocks:
        for lin in (blk.attn.proj, blk.fc2):
            lin.weight.data[:] = 0.0
            lin.bias.data[:] = 0.0
    z, s = Tensor(rng.standard_normal((16, 16))), Tensor(rng.standard_normal((64, 16)))
    out = bb.encode(z, s)
    np.testing.assert_array_equal(out.H.data, np.concatenate([z.data, s.data]))


def test_depth_zero_is_concat(rng):
    bb = ViTBackbone(_cfg(depth=0), rng)
    z, s = Tensor(rng.standard_normal((4, 16))), Tensor(rng.standard_normal((16, 16)))
    np.testing.assert_array_equal(bb.encode(z, s).H.data, np.concatenate([z.data, s.data]))


def test_zero_hook_is_identity(rng):
    bb = ViTBackbone(_cfg(), rng)
    z, s = Tensor(rng.standard_normal((4, 16))), Tensor(rng.standard_normal((16, 16)))
    plain = bb.encode(z, s).H.data
    hooked = bb.encode(z, s, lambda h, l: h + np.zeros(h.shape)).H.data
    np.testing.assert_array_equal(plain, hooked)


def test_hook_wrong_shape_names_layer(rng):
    bb = ViTBackbone(_cfg(), rng)
    z, s = Tensor(rng.standard_normal((4, 16))), Tensor(rng.standard_normal((16, 16)))

    def bad(h, l):
        return h if l == 0 else h[:-1]

    with pytest.raises(ShapeError, match="layer 1"):
        bb.encode(z, s, bad)


def test_encode_deterministic():
    def run():
        r = np.random.default_rng(5)
        bb = ViTBackbone(_cfg(), r)
        z, s = Tensor(r.standard_normal((4, 16))), Tensor(r.standard_normal((16, 16)))
        st = bb.encode(z, s)
        return st.H.data.tobytes(), st.n_z, st.n_s

    assert run() == run()


def test_token_partition(rng):
    bb = ViTBackbone(_cfg(), rng)
    st = bb.encode(Tensor(rng.standard_normal((4, 16))), Tensor(rng.standard_normal((16, 16))))
    assert st.template.shape == (4, 16) and st.search.shape == (16, 16)


def test_search_content_equivariance_at_zero_pos(rng):
    """Swapping two search patches swaps their output rows when positions are zeroed."""
    cfg = _cfg()
    bb = ViTBackbone(cfg, rng)
    bb.pos_template.data[:] = 0.0
    bb.pos_search.data[:] = 0.0
    z = rng.random((3, 32, 32))
    s = rng.random((3, 64, 64))
    s2 = s.copy()
    s2[:, 0:8, 0:8], s2[:, 8:16, 16:24] = s[:, 8:16, 16:24], s[:, 0:8, 0:8]
    a = bb.encode(bb.embed_template(z), bb.embed_search(s)).search.data
    b = bb.encode(bb.embed_template(z), bb.embed_search(s2)).search.data
    i, j = 0, 1 * 8 + 2
    np.testing.assert_allclose(a[i], b[j], atol=1e-12)
    np.testing.assert_allclose(a[j], b[i], atol=1e-12)
    keep = [k for k in range(64) if k not in (i, j)]
    np.testing.assert_allclose(a[keep], b[keep], atol=1e-12)


def test_foundation_full_gradient(toy, rng, off_kinks):
    model = FoundationTracker(toy, rng=np.random.default_rng(0))
    off_kinks(model, rng)
    z, x = rng.random((1, 3, 32, 32)), rng.random((1, 3, 64, 64))
    projs = {"score": rng.standard_normal((1, 8, 8)), "offset": rng.standard_normal((1, 2, 8, 8)),
             "size": rng.standard_normal((1, 2, 8, 8)), "mask_logits": rng.standard_normal((1, 64, 64))}

    def f(_):
        out = model(z, x)
        total = None
        for k, p in projs.items():
            term = ops.sum(out[k] * p)
            total = term if total is None else total + term
        return total

    # ~10^4 ReLU units: a 1e-5 step can straddle a kink, so whole-model checks use 1e-6
    rep = finite_diff_check(f, model.parameters(), step=1e-6, max_coords=400, seed=1)
    assert rep.passed, rep


def test_foundation_output_shapes(toy, rng):
    model = FoundationTracker(toy, rng=np.random.default_rng(0))
    out = model(rng.random((2, 3, 32, 32)), rng.random((2, 3, 64, 64)))
    assert out["score"].shape == (2, 8, 8)
    assert out["offset"].shape == (2, 2, 8, 8)
    assert out["size"].shape == (2, 2, 8, 8)
    assert out["mask_logits"].shape == (2, 64, 64)
