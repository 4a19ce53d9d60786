# -*- coding: utf-8 -*-
import numpy as np
import pytest

from MAStools import tensor as T
from MAStools.tensor import Tensor, Rng
from MAStools.attention import attention_param_count, local_level, global_level
from MAStools.utils import MASToolsError
from MAStools.model import *


def image_pair(rng, size=8):
    return Tensor(rng.random((3, size, size))), Tensor(rng.random((3, size, size)))

def tiny(**kw):
    kw.setdefault('channels', (4, 8))
    return ModelConfig(**kw)


CONFIGS = [
    tiny(variant='vanilla'),
    tiny(variant='vanilla', fusion='diff'),
    tiny(variant='masnet'),
    tiny(variant='masnet', fusion='add', level=global_level()),
    tiny(variant='masnet', level='local:2x2', attention_stages=(0,)),
    tiny(variant='masnet', level='individual-literal', d=3),
    tiny(variant='masnet', fusion='diff', multiscale=True),
    tiny(variant='masnet', upsample='direct', channels=(4, 8, 8)),
    tiny(variant='early', channels=(8, 8)),
    tiny(variant='early', multiscale=True, channels=(6, 8)),
]


def test_config_defaults():
    cfg = ModelConfig()
    assert cfg.variant == 'masnet' and cfg.in_channels == 3
    assert cfg.attention_enabled == (True, True)
    assert cfg.stage_d(1) == 16
    assert ModelConfig(variant='early').in_channels == 6
    assert ModelConfig(variant='vanilla').attention_enabled == (False, False)
    assert ModelConfig(attention_stages=(1, 0)).attention_stages is None
    assert ModelConfig(attention_stages=[1]).attention_enabled == (False, True)

def test_config_errors():
    bad = [dict(variant='late'), dict(fusion='concat'), dict(upsample='bilinear'),
           dict(variant='early', in_channels=3), dict(variant='vanilla', in_channels=6),
           dict(channels=(16, 8)), dict(channels=(2, 4)), dict(channels=()),
           dict(attention_stages=()), dict(attention_stages=(2,)), dict(d=-1),
           dict(multiscale=True, upsample='direct'), dict(level='pixel')]
    for kw in bad:
        with pytest.raises(MASToolsError):
            ModelConfig(**kw)

def test_variant_of():
    cfg = tiny(attention_stages=(1,), fusion='add')
    v = cfg.variant_of('vanilla')
    assert v.variant == 'vanilla' and v.attention_stages is None and v.fusion == 'add'
    e = tiny(channels=(8, 8)).variant_of('early')
    assert e.in_channels == 6
    assert v.variant_of('masnet').attention_enabled == (True, True)


def test_fuse_examples():
    rng = Rng(1)
    f = Tensor(rng.normal((4, 2, 2)))
    assert not fuse(f, f, 'diff').data.any()
    np.testing.assert_array_equal(fuse(f, Tensor(np.zeros((4, 2, 2))), 'add').data, f.data)
    w, b = Tensor(rng.normal((4, 8, 1, 1))), Tensor(np.zeros(4))
    assert fuse(f, f, 'stack', w, b).shape == (4, 2, 2)
    with pytest.raises(ModelError):
        fuse(f, f, 'stack')
    with pytest.raises(ModelError):
        fuse(f, Tensor(np.ones((4, 2, 3))), 'add')
    with pytest.raises(ModelError):
        fuse(f, f, 'mul')


def test_param_shapes_order():
    names = [n for g, n, s, fan in param_shapes(tiny(d=2))]
    assert names[:4] == ['encoder.0.weight', 'encoder.0.bias', 'encoder.1.weight', 'encoder.1.bias']
    assert names[4:8] == ['attention.0.wq', 'attention.0.wk', 'attention.0.wv', 'attention.0.wo']
    assert names[-4:] == ['decoder.1.weight', 'decoder.1.bias', 'decoder.head.weight', 'decoder.head.bias']
    assert 'fusion.1.weight' in names and 'fusion.0.weight' not in names

def test_count_params_examples():
    c = count_params(ModelConfig(channels=(8, 16)))
    assert c['attention'] == 3*8*8 + 3*16*16 == 960
    v = count_params(ModelConfig(variant='vanilla', channels=(8, 16)))
    assert v['attention'] == 0 and v['attention_fraction'] == 0 and v['overhead'] == 0
    assert c['total'] - v['total'] == 960
    assert c['attention_fraction'] == 960 / c['total']

def test_count_params_matches_models():
    for cfg in CONFIGS:
        c = count_params(cfg)
        m = Model.create(cfg, Rng(0))
        assert c['total'] == m.param_count() == sum(c[k] for k in ('encoder', 'attention', 'fusion', 'decoder'))
        van = count_params(cfg.variant_of('vanilla')) if cfg.variant != 'early' else c
        expected = sum(attention_param_count(cfg.channels[s], cfg.stage_d(s))
            for s, on in enumerate(cfg.attention_enabled) if on)
        assert c['total'] - van['total'] == c['attention'] == expected

def random_config(rng):
    "A random non-early config: widths, attention width, stages, level and fusion"
    n = int(rng.integers(1, 4))
    widths, w = [], int(rng.integers(3, 7))
    for s in range(n):
        widths += [w]
        w += int(rng.integers(0, 5))
    stages = [s for s in range(n) if rng.random() < 0.5] or [int(rng.integers(0, n))]
    return ModelConfig(variant='masnet', channels=tuple(widths), attention_stages=tuple(stages),
        d=int(rng.integers(0, 7)), fusion=('stack', 'add', 'diff')[int(rng.integers(0, 3))],
        level=(global_level(), local_level(1, 1), 'individual', 'individual-literal')[int(rng.integers(0, 4))],
        multiscale=rng.random() < 0.5)

def test_attention_overhead_on_random_configs():
    rng = Rng(21)
    for i in range(10):
        cfg = random_config(rng)
        c, van = count_params(cfg), count_params(cfg.variant_of('vanilla'))
        expected = 0
        for s, on in enumerate(cfg.attention_enabled):
            C, d = cfg.channels[s], cfg.d or cfg.channels[s]
            if on:
                expected += 3*C*d + (d*C if d != C else 0)
        assert c['total'] - van['total'] == c['attention'] == expected, str(cfg)
        assert Model.create(cfg, Rng(i)).param_count() == c['total']
        assert Model.create(cfg.variant_of('vanilla'), Rng(i)).param_count() == van['total']
        assert c['overhead'] == expected / van['total']


def test_weight_sharing():
    rng = Rng(2)
    m = Model.create(tiny(variant='vanilla'), rng.split('init'))
    x, x2 = image_pair(rng)
    f1, f2, acts = m.siamese_encode(x, x)
    for a, b in zip(f1, f2):
        np.testing.assert_array_equal(a.data, b.data)
    assert acts == [None, None]

def test_zeroed_attention_equals_vanilla():
    rng = Rng(3)
    for cfg in (tiny(), tiny(level='global', d=2), tiny(level='local:1x2', multiscale=True, fusion='add')):
        masnet = Model.create(cfg, Rng(77))
        masnet.zero_attention_values()
        vanilla = Model.create(cfg.variant_of('vanilla'), Rng(77))
        for i in range(20):
            x1, x2 = image_pair(rng)
            a, b = masnet.siamese_encode(x1, x2), vanilla.siamese_encode(x1, x2)
            for s in range(cfg.n_stages):
                np.testing.assert_array_equal(a[0][s].data, b[0][s].data)
                np.testing.assert_array_equal(a[1][s].data, b[1][s].data)
            np.testing.assert_array_equal(masnet.forward(x1, x2)[0].data, vanilla.forward(x1, x2)[0].data)

def test_swap():
    rng = Rng(4)
    for cfg in (tiny(), tiny(variant='vanilla'), tiny(level='global')):
        m = Model.create(cfg, rng)
        x1, x2 = image_pair(rng)
        f1, f2, acts = m.siamese_encode(x1, x2)
        g2, g1, acts = m.siamese_encode(x2, x1)
        for s in range(cfg.n_stages):
            np.testing.assert_array_equal(f1[s].data, g1[s].data)
            np.testing.assert_array_equal(f2[s].data, g2[s].data)
        np.testing.assert_array_equal(fuse(f1[-1], f2[-1], 'diff').data, -fuse(g2[-1], g1[-1], 'diff').data)
    m = Model.create(tiny(fusion='add'), rng)
    np.testing.assert_array_equal(m.forward(x1, x2)[0].data, m.forward(x2, x1)[0].data)

def test_diff_fusion_of_equal_images_is_zero():
    rng = Rng(5)
    m = Model.create(tiny(variant='vanilla', fusion='diff'), rng)
    x, x2 = image_pair(rng)
    f1, f2, acts = m.siamese_encode(x, x)
    assert not m.fuse_stage(1, f1[1], f2[1]).data.any()


@pytest.mark.parametrize('cfg', CONFIGS, ids=lambda c: '%s-%s-%s' % (c.variant, c.fusion, c.level))
def test_forward_extent_and_finite(cfg):
    rng = Rng(6)
    m = Model.create(cfg, rng)
    size = 2**cfg.n_stages * 2
    x1, x2 = image_pair(rng, size)
    logits, acts = m.forward(x1, x2, keep_activations=True)
    assert logits.shape == (2, size, size)
    assert np.isfinite(logits.data).all()
    pred = m.predict(x1, x2)
    assert pred.shape == (size, size) and pred.dtype == np.uint8
    if cfg.variant == 'masnet':
        assert [a is not None for a in acts] == list(cfg.attention_enabled)
    else:
        assert acts is None or not any(acts)

def test_zero_weights_predict_no_change():
    rng = Rng(7)
    m = Model.create(tiny(), rng)
    for name, t in m.parameters():
        t.data[...] = 0
    x1, x2 = image_pair(rng)
    logits, acts = m.forward(x1, x2)
    assert not logits.data.any()
    assert not m.predict(x1, x2).any()

def test_decode_multiscale_skips():
    rng = Rng(8)
    m = Model.create(tiny(multiscale=True, fusion='add'), rng)
    x1, x2 = image_pair(rng)
    f1, f2, acts = m.siamese_encode(x1, x2)
    assert m.decode({0: f1[0], 1: f2[1]}).shape == (2, 8, 8)

def test_input_checks():
    rng = Rng(9)
    m = Model.create(tiny(), rng)
    with pytest.raises(ModelError):
        m.forward(Tensor(rng.random((3, 6, 8))), Tensor(rng.random((3, 6, 8))))
    with pytest.raises(ModelError):
        m.forward(Tensor(rng.random((1, 8, 8))), Tensor(rng.random((1, 8, 8))))
    with pytest.raises(ModelError):
        m.forward(Tensor(rng.random((3, 8, 8))), Tensor(rng.random((3, 4, 4))))

def test_early_fusion():
    rng = Rng(10)
    cfg = tiny(variant='early', channels=(8, 8))
    m = Model.create(cfg, rng)
    assert m.params['encoder.0.weight'].shape == (8, 6, 3, 3)
    assert not m.attention and not any(n.startswith('fusion') for n, t in m.parameters())
    x1, x2 = image_pair(rng)
    assert m.forward(x1, x2)[0].shape == (2, 8, 8)
    with pytest.raises(ModelError):
        m.siamese_encode(x1, x2)

def test_model_rejects_foreign_parameters():
    a = Model.create(tiny(), Rng(0))
    with pytest.raises(ModelError):
        Model(tiny(variant='vanilla'), a.params)


def test_end_to_end_grad_check():
    with T.verification_mode():
        rng = Rng(11)
        cfg = ModelConfig(channels=(3, 4), level='individual')
        m = Model.create(cfg, rng.split('init'))
        x1, x2 = image_pair(rng, 16)
        inputs = [x1, x2] + [t for n, t in m.parameters()]
        report = T.grad_check(lambda xs: T.sum(m.forward(xs[0], xs[1])[0]), inputs,
            eps=1e-5, sample=60, rng=rng.split('coords'))
        assert report.passed, str(report)

def test_global_level_grad_check():
    with T.verification_mode():
        rng = Rng(12)
        m = Model.create(ModelConfig(channels=(3, 4), level='global', fusion='diff', d=2), rng)
        x1, x2 = image_pair(rng)
        params = [t for n, t in m.parameters() if n.startswith('attention')]
        report = T.grad_check(lambda xs: T.sum(m.forward(x1, x2)[0]), params, eps=1e-5)
        assert report.passed, str(report)


@pytest.mark.parametrize('cfg', CONFIGS, ids=lambda c: '%s-%s-%s' % (c.variant, c.fusion, c.level))
def test_checkpoint_round_trip(tmp_path, cfg):
    m = Model.create(cfg, Rng(13))
    path = str(tmp_path / 'model.ckpt')
    save_checkpoint(m, path)
    n = load_checkpoint(path)
    assert n.config == cfg
    assert [k for k, t in n.parameters()] == [k for k, t in m.parameters()]
    for (k, a), (k2, b) in zip(m.parameters(), n.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    save_checkpoint(n, str(tmp_path / 'again.ckpt'))
    assert (tmp_path / 'again.ckpt').read_bytes() == (tmp_path / 'model.ckpt').read_bytes()

def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / 'model.ckpt'
    cfg = tiny()
    save_checkpoint(Model.create(cfg, Rng(0)), str(path))
    s = path.read_bytes()
    assert s[:5] == MAGIC
    entries = len(config_entries(cfg))
    assert s[5:9] == entries.to_bytes(4, 'little')
    count = int.from_bytes(s[9+8*entries:17+8*entries], 'little')
    assert count == count_params(cfg)['total']
    assert len(s) == 17 + 8*entries + 4*count

def test_checkpoint_errors(tmp_path):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(Model.create(tiny(), Rng(0)), str(path))
    s = path.read_bytes()
    bad = tmp_path / 'bad.ckpt'
    for data in (b'MAS', b'NOPE1' + s[5:], s[:-4], s[:20], s + b'\0\0\0\0'):
        bad.write_bytes(data)
        with pytest.raises(ModelError):
            load_checkpoint(str(bad))
    with pytest.raises(OSError):
        load_checkpoint(str(tmp_path / 'missing.ckpt'))

def test_config_entries_reject_unknown_tag():
    entries = config_entries(tiny()) + [(99, 0, 1)]
    with pytest.raises(ModelError):
        config_from_entries(entries)
    with pytest.raises(ModelError):
        config_from_entries([e for e in config_entries(tiny()) if e[0] != TAG_FUSION])
