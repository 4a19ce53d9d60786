# -*- coding: utf-8 -*-
import os
import numpy as np
import pytest

from MAStools import pnmutils
from MAStools.pnmutils import PNMError
from MAStools.tensor import Rng
from MAStools.synth import *
from MAStools.dataset import *


def write_bytes(path, s):
    with open(path, 'wb') as f:
        f.write(s)

def make_dirs(root):
    for d in SUBDIRS:
        os.makedirs(os.path.join(root, d), exist_ok=True)
    return root

def random_item(rng, name, size=8):
    pair = ImagePair(rng.random((3, size, size)), rng.random((3, size, size)), name)
    return pair, (rng.random((size, size)) < 0.3).astype(np.uint8)



def test_quantize():
    np.testing.assert_array_equal(pnmutils.quantize([0, 1, 0.5, -1, 2, 1/255.]), [0, 255, 128, 0, 255, 1])
    u = np.arange(256, dtype=np.uint8)
    np.testing.assert_array_equal(pnmutils.quantize(pnmutils.dequantize(u)), u)

def test_decode_hand_written_pgm():
    s = b'P5 4 4 255\n' + bytes(range(16))
    a = pnmutils.decode(s)
    assert a.shape == (4, 4) and a.dtype == np.uint8
    assert a[1, 0] == 4 and a[3, 3] == 15
    a = pnmutils.decode(b'P5\n# made by hand\n2 1\n255\n\x07\x80')
    np.testing.assert_array_equal(a, [[7, 128]])

def test_decode_ppm_is_interleaved():
    a = pnmutils.decode(b'P6 2 1 255\n' + bytes([1, 2, 3, 4, 5, 6]))
    assert a.shape == (3, 1, 2)
    np.testing.assert_array_equal(a[:, 0, 1], [4, 5, 6])

def test_decode_errors():
    bad = [b'P3 1 1 255\n\0', b'P5 1 1 65535\n\0\0', b'P5 2 2 255\n\0\0\0', b'P5 1 1 255\n\0\0',
           b'P5 1 1 255', b'P5 1\n', b'P5 0 1 255\n', b'P5 a b 255\n\0', b'P5 1 1 255 #x']
    for s in bad:
        with pytest.raises(PNMError):
            pnmutils.decode(s)
    with pytest.raises(PNMError):
        pnmutils.decode(b'P5 2 2 255\n\0\0\0\0', shape=(3, 3))
    with pytest.raises(PNMError):
        pnmutils.encode(np.zeros((2, 2, 2)))

def test_mask_files(tmp_path):
    path = str(tmp_path / 'm.pgm')
    pnmutils.write_mask(path, np.ones((3, 2)))
    assert open(path, 'rb').read() == b'P5\n2 3\n255\n' + b'\xff'*6
    write_bytes(path, b'P5 3 1 255\n' + bytes([127, 128, 0]))
    np.testing.assert_array_equal(pnmutils.read_mask(path), [[0, 1, 0]])
    with pytest.raises(PNMError):
        pnmutils.write_mask(path, np.ones((1, 2, 2)))
    write_bytes(path, b'P6 1 1 255\n\0\0\0')
    with pytest.raises(PNMError):
        pnmutils.read_mask(path)

def test_image_round_trip(tmp_path):
    path = str(tmp_path / 'x.ppm')
    x = Rng(1).random((3, 5, 7))
    pnmutils.write_image(path, x)
    np.testing.assert_array_equal(pnmutils.read_raw(path), pnmutils.quantize(x))
    y = pnmutils.read_image(path, (3, 5, 7))
    assert y.dtype == np.float32 and np.abs(y - x).max() <= 0.5/255 + 1e-6
    with pytest.raises(PNMError):
        pnmutils.read_image(path, (3, 7, 5))



def test_synth_config_errors():
    for kw in (dict(size=0), dict(persistent=-1), dict(changes=-2), dict(jitter=1.0), dict(noise=-0.1)):
        with pytest.raises(SynthError):
            SynthConfig(**kw)

def test_generate_pair_is_deterministic():
    cfg = SynthConfig(size=16)
    p1, m1 = generate_pair(cfg, Rng(5), 'x')
    p2, m2 = generate_pair(cfg, Rng(5), 'x')
    np.testing.assert_array_equal(p1.image_a, p2.image_a)
    np.testing.assert_array_equal(p1.image_b, p2.image_b)
    np.testing.assert_array_equal(m1, m2)
    assert p1.image_a.dtype == np.float32 and p1.image_a.shape == (3, 16, 16)
    assert 0 <= p1.image_b.min() and p1.image_b.max() <= 1
    p3, m3 = generate_pair(cfg, Rng(6), 'x')
    assert not np.array_equal(p1.image_a, p3.image_a)

def test_pseudo_change_has_no_mask():
    pair, mask = generate_pair(SynthConfig(size=16, changes=0), Rng(0))
    assert not mask.any()
    assert not np.array_equal(pair.image_a, pair.image_b)

def test_known_rectangle():
    rect = Shape('rect', 2, 3, 4, 5, (0.9, 0.8, 0.7))
    a, b, mask = render_scene(Scene((0.1, 0.1, 0.1), [], [(rect, True)]), 10)
    expected = np.zeros((10, 10), np.uint8)
    expected[2:6, 3:8] = 1
    np.testing.assert_array_equal(mask, expected)
    np.testing.assert_allclose(b[:, 4, 5], [0.9, 0.8, 0.7])
    np.testing.assert_allclose(a[:, 4, 5], [0.1, 0.1, 0.1])
    a, b, mask = render_scene(Scene((0.1, 0.1, 0.1), [], [(rect, False)]), 10)
    np.testing.assert_array_equal(mask, expected)
    np.testing.assert_allclose(a[:, 4, 5], [0.9, 0.8, 0.7])

def test_shapes_are_clipped():
    m = Shape('rect', -2, 8, 5, 6).footprint(10)
    assert m[:3, 8:].all() and m.sum() == 6
    assert not Shape('ellipse', 20, 20, 4, 4).footprint(10).any()


def rasterize(shape, size):
    "Pixel by pixel coverage test"
    m = np.zeros((size, size), np.uint8)
    for i in range(size):
        for j in range(size):
            if shape.kind == 'rect':
                inside = shape.top <= i < shape.top + shape.height and shape.left <= j < shape.left + shape.width
            else:
                ry, rx = shape.height/2.0, shape.width/2.0
                dy = (i + 0.5 - shape.top - ry) / ry
                dx = (j + 0.5 - shape.left - rx) / rx
                inside = dy*dy + dx*dx <= 1
            m[i, j] = inside
    return m

def test_mask_matches_rasterizer():
    cfg = SynthConfig(size=20, changes=3)
    for seed in range(20):
        scene = make_scene(cfg, Rng(seed))
        pair, mask = generate_pair(cfg, Rng(seed))
        expected = np.zeros((20, 20), np.uint8)
        for s, added in scene.changes:
            expected |= rasterize(s, 20)
        np.testing.assert_array_equal(mask, expected)


def test_generate_dataset(tmp_path):
    cfg = SynthConfig(size=8)
    generate_dataset(cfg, str(tmp_path), 3, Rng(9))
    items = load_dataset(str(tmp_path))
    assert [p.name for p, m in items] == ['0000', '0001', '0002']
    rng = Rng(9)
    for pair, mask in items:
        p, m = generate_pair(cfg, rng, pair.name)
        np.testing.assert_array_equal(mask, m)
        np.testing.assert_array_equal(pnmutils.quantize(pair.image_b), pnmutils.quantize(p.image_b))



def test_image_pair_checks():
    with pytest.raises(DatasetError):
        ImagePair(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(DatasetError):
        ImagePair(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)))
    p = ImagePair(np.zeros((3, 4, 5)), np.ones((3, 4, 5)), 'p')
    assert p.extent == (4, 5)
    assert p.swapped().image_a.all()
    with pytest.raises(DatasetError):
        check_mask(np.zeros((5, 4), np.uint8), p)

def test_load_empty_dataset(tmp_path):
    assert load_dataset(make_dirs(str(tmp_path))) == []

def test_load_sorted(tmp_path):
    root = make_dirs(str(tmp_path))
    rng = Rng(2)
    for name in ('b', 'a', 'c'):
        save_pair(root, *random_item(rng, name))
    assert [p.name for p, m in load_dataset(root)] == ['a', 'b', 'c']
    assert list_stems(root) == ['a', 'b', 'c']

def test_load_thresholds_mask(tmp_path):
    root = make_dirs(str(tmp_path))
    pair, mask = random_item(Rng(3), 'x', size=2)
    save_pair(root, pair, mask)
    write_bytes(os.path.join(root, 'label', 'x.pgm'), b'P5 2 2 255\n' + bytes([127, 128, 255, 0]))
    (p, m), = load_dataset(root)
    np.testing.assert_array_equal(m, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(p.image_a, pnmutils.dequantize(pnmutils.quantize(pair.image_a)))

def test_load_errors(tmp_path):
    root = make_dirs(str(tmp_path))
    save_pair(root, *random_item(Rng(4), 'x'))
    os.remove(os.path.join(root, 'B', 'x.ppm'))
    with pytest.raises(DatasetError):
        load_dataset(root)
    save_pair(root, *random_item(Rng(4), 'x'))
    pnmutils.write_mask(os.path.join(root, 'label', 'x.pgm'), np.zeros((4, 4)))
    with pytest.raises(DatasetError):
        load_dataset(root)
    with pytest.raises(DatasetError):
        load_dataset(str(tmp_path / 'nowhere'))

def test_select():
    items = [random_item(Rng(i), n) for i, n in enumerate('abcd')]
    assert [p.name for p, m in select(items, ['d', 'b'])] == ['b', 'd']



def test_involutions():
    a = Rng(5).random((3, 4, 6))
    np.testing.assert_array_equal(hflip(hflip(a)), a)
    np.testing.assert_array_equal(vflip(vflip(a)), a)
    np.testing.assert_array_equal(rot90(rot90(rot90(rot90(a, 1), 1), 1), 1), a)
    assert rot90(a, 1).shape == (3, 6, 4)

def test_resize_and_crop():
    a = np.arange(4).reshape(2, 2)
    np.testing.assert_array_equal(resize_nearest(a, 4, 4), a.repeat(2, 0).repeat(2, 1))
    b = np.arange(16).reshape(4, 4)
    np.testing.assert_array_equal(resize_nearest(b, 2, 2), b[1::2, 1::2])
    c = crop_pad(np.ones((3, 2, 2)), 1, 0, 3)
    assert c.shape == (3, 3, 3)
    np.testing.assert_array_equal(c[0], [[1, 1, 0], [0, 0, 0], [0, 0, 0]])

def test_augment_switch():
    pair, mask = random_item(Rng(6), 'p')
    policy = AugmentPolicy(crop_size=0, scale_min=1, scale_max=1, flip=False, rotate=False)
    seen = set()
    for seed in range(20):
        p, m = augment(pair, mask, Rng(seed), policy)
        np.testing.assert_array_equal(m, mask)
        switched = np.array_equal(p.image_a, pair.image_b)
        np.testing.assert_array_equal(p.image_b, (pair.image_b, pair.image_a)[switched])
        seen.add(switched)
    assert seen == {True, False}

def test_augment_transforms_all_alike():
    size = 16
    for seed in range(30):
        rng = Rng(seed)
        r, c = [int(n) for n in rng.integers(0, size, 2)]
        mask = np.zeros((size, size), np.uint8)
        mask[r, c] = 1
        a = np.zeros((3, size, size))
        a[:, r, c] = 1
        pair = ImagePair(a, a * 0.5, 'point')
        p, m = augment(pair, mask, rng, AugmentPolicy(crop_size=12))
        assert p.extent == m.shape == (12, 12)
        assert m.dtype == np.uint8
        hit = m == 1
        for img in (p.image_a, p.image_b):
            for ch in img:
                np.testing.assert_array_equal(ch > 0, hit)

def test_augment_aligned_extent():
    pair, mask = random_item(Rng(7), 'p', size=18)
    policy = AugmentPolicy(crop_size=0, align=4)
    extents = set()
    for seed in range(20):
        p, m = augment(pair, mask, Rng(seed), policy)
        assert p.extent == m.shape and p.image_a.shape == p.image_b.shape
        assert m.shape[0] % 4 == 0 and m.shape[1] % 4 == 0 and min(m.shape) >= 4
        extents.add(m.shape)
    assert len(extents) > 1
    assert augment(pair, mask, Rng(0), AugmentPolicy(crop_size=0, scale_min=1, scale_max=1, align=4))[1].shape == (16, 16)

def test_augment_policy_errors():
    with pytest.raises(DatasetError):
        AugmentPolicy(scale_min=2, scale_max=1)
    with pytest.raises(DatasetError):
        AugmentPolicy(crop_size=-1)
    with pytest.raises(DatasetError):
        AugmentPolicy(crop_size=6, align=4)
    with pytest.raises(DatasetError):
        AugmentPolicy(align=0)



def test_kfold_examples():
    names = ['h', 'g', 'f', 'e', 'd', 'c', 'b', 'a']
    folds = kfold_split(names, 4)
    assert [len(f) for f in folds] == [2, 2, 2, 2]
    assert folds[0] == ['a', 'b']
    assert [len(f) for f in kfold_split(list('abcde'), 4)] == [2, 1, 1, 1]
    assert kfold_split(list('cab'), 3) == [['a'], ['b'], ['c']]
    for k in (1, 4):
        with pytest.raises(DatasetError):
            kfold_split(list('abc'), k)

def test_kfold_partition():
    rng = Rng(7)
    for n in range(2, 201):
        names = ['%04d' % i for i in rng.permutation(n)]
        for k in set([2, n, int(rng.integers(2, n+1))]):
            folds = kfold_split(names, k)
            sizes = [len(f) for f in folds]
            assert len(folds) == k and max(sizes) - min(sizes) <= 1
            flat = [x for f in folds for x in f]
            assert flat == sorted(names)

def test_ratio_split():
    names = ['%02d' % i for i in range(10)]
    train, val, test = ratio_split(names)
    assert (len(train), len(val), len(test)) == (7, 1, 2)
    assert train + val + test == names
    with pytest.raises(DatasetError):
        ratio_split(names, (0, 0))
