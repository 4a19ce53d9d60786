# -*- coding: utf-8 -*-
"Synthetic co-registered change pairs with exact change masks"

""" A scene is a dark background with bright persistent shapes (rectangles and
ellipses) present at both times, plus change shapes that either appear in the
second image ('added') or exist only in the first ('removed'). The second
image then gets a global per-channel gain/bias jitter and both images get
independent pixel noise: appearance differs everywhere (pseudo-change) while
the mask marks only change shape footprints. Shapes may run off the canvas
and are clipped. """

import os
from dataclasses import dataclass, field
import numpy as np

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
from MAStools.utils import MASToolsError, makedirs
from MAStools.tensor import Rng
from MAStools.dataset import ImagePair, save_pair, SUBDIRS


class SynthError(MASToolsError): pass


@dataclass
class SynthConfig:
    "Synthetic corpus parameters"
    size: int = 64
    persistent: int = 4 # shapes present at both times
    changes: int = 2 # shapes added or removed
    jitter: float = 0.1 # photometric gain/bias amplitude
    noise: float = 0.02 # pixel noise standard deviation
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise SynthError("Synthetic image size must be positive, got %d" % self.size)
        if self.persistent < 0 or self.changes < 0:
            raise SynthError("Shape counts must not be negative")
        for name in ('jitter', 'noise'):
            if not 0 <= getattr(self, name) < 1:
                raise SynthError("%s amplitude must be in [0,1), got %r" % (name, getattr(self, name)))


@dataclass
class Shape:
    "Axis aligned rectangle or ellipse inscribed in the (top, left, height, width) box"
    kind: str
    top: int
    left: int
    height: int
    width: int
    color: tuple = (1.0, 1.0, 1.0)

    def footprint(self, size):
        "Boolean size x size coverage, clipped to the canvas"
        m = np.zeros((size, size), bool)
        if self.kind == 'rect':
            m[max(self.top, 0):max(self.top+self.height, 0), max(self.left, 0):max(self.left+self.width, 0)] = True
            return m
        # pixel centers inside the inscribed ellipse
        ry, rx = self.height/2.0, self.width/2.0
        cy, cx = self.top + ry, self.left + rx
        y = (np.arange(size) + 0.5 - cy) / ry
        x = (np.arange(size) + 0.5 - cx) / rx
        return y[:, None]**2 + x[None, :]**2 <= 1.0


@dataclass
class Scene:
    background: tuple
    persistent: list = field(default_factory=list)
    changes: list = field(default_factory=list) # (Shape, added)


def random_shape(size, rng):
    kind = ('rect', 'ellipse')[rng.integers(0, 2)]
    lo, hi = max(1, size//8), max(2, size//3)
    h, w = rng.integers(lo, hi+1), rng.integers(lo, hi+1)
    top = rng.integers(-(h//2), size - h//2)
    left = rng.integers(-(w//2), size - w//2)
    color = tuple(float(c) for c in rng.uniform(0.5, 1.0, 3))
    return Shape(kind, top, left, h, w, color)

def make_scene(cfg, rng):
    "Draws a random scene"
    background = tuple(float(c) for c in rng.uniform(0.05, 0.35, 3))
    persistent = [random_shape(cfg.size, rng) for i in range(cfg.persistent)]
    changes = []
    for i in range(cfg.changes):
        s = random_shape(cfg.size, rng)
        changes += [(s, rng.random() < 0.5)]
    return Scene(background, persistent, changes)

def _paint(img, shape, size):
    m = shape.footprint(size)
    img[:, m] = np.asarray(shape.color, img.dtype)[:, None]

def render_scene(scene, size):
    "Noise free (image_a, image_b, mask) of a scene"
    a = np.empty((3, size, size), np.float64)
    a[...] = np.asarray(scene.background)[:, None, None]
    for s in scene.persistent:
        _paint(a, s, size)
    b = a.copy()
    mask = np.zeros((size, size), np.uint8)
    for s, added in scene.changes:
        _paint(b if added else a, s, size)
        mask[s.footprint(size)] = 1
    return a, b, mask

def generate_pair(cfg, rng, name=''):
    "Random (ImagePair, mask); deterministic for a given generator state"
    scene = make_scene(cfg, rng)
    a, b, mask = render_scene(scene, cfg.size)
    gain = 1.0 + cfg.jitter * rng.uniform(-1, 1, 3)
    bias = 0.5 * cfg.jitter * rng.uniform(-1, 1, 3)
    b = b * gain[:, None, None] + bias[:, None, None]
    a = a + cfg.noise * rng.normal(a.shape)
    b = b + cfg.noise * rng.normal(b.shape)
    pair = ImagePair(np.clip(a, 0, 1).astype(np.float32), np.clip(b, 0, 1).astype(np.float32), name)
    if DEBUG&4: log("generate_pair: '%s', %d change pixels", name, mask.sum())
    return pair, mask

def generate_dataset(cfg, out_dir, n_pairs, rng=None, printn=None):
    "Writes n_pairs synthetic pairs (stems %04d) in the A/ B/ label/ layout"
    if n_pairs < 0:
        raise SynthError("Negative pair count %d" % n_pairs)
    rng = rng or Rng(cfg.seed)
    makedirs(out_dir, *SUBDIRS)
    for i in range(n_pairs):
        pair, mask = generate_pair(cfg, rng, '%04d' % i)
        save_pair(out_dir, pair, mask)
        if printn and (i+1) % 100 == 0:
            printn("%d pairs written" % (i+1))
    if printn: printn("Generated %d pairs of %dx%d in %s" % (n_pairs, cfg.size, cfg.size, out_dir))
