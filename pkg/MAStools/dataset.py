# -*- coding: utf-8 -*-
"Change detection corpora: image pairs, directory loading, augmentation and splits"

""" DIRECTORY LAYOUT
    A/<stem>.ppm      image of time 1 (P6)
    B/<stem>.ppm      image of time 2 (P6), co-registered with A
    label/<stem>.pgm  change mask (P5), pixels > 127 are change

Pairs are always returned sorted by stem. """

import os, math
from dataclasses import dataclass
import numpy as np

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
from MAStools.utils import MASToolsError
from MAStools import pnmutils

SUBDIRS = ('A', 'B', 'label')


class DatasetError(MASToolsError): pass


@dataclass
class ImagePair:
    "Co-registered 3 x H x W images with values in [0,1]"
    image_a: np.ndarray
    image_b: np.ndarray
    name: str = ''

    def __post_init__(self):
        if self.image_a.shape != self.image_b.shape:
            raise DatasetError("Pair '%s': images differ in shape, %s vs %s" % (self.name, self.image_a.shape, self.image_b.shape))
        if self.image_a.ndim != 3 or self.image_a.shape[0] != 3:
            raise DatasetError("Pair '%s': expected 3 x H x W images, got %s" % (self.name, self.image_a.shape))

    @property
    def extent(self):
        return self.image_a.shape[1:]

    def swapped(self):
        return ImagePair(self.image_b, self.image_a, self.name)


def check_mask(mask, pair):
    "Validates a ChangeMask (H x W of 0/1) against its pair"
    if mask.shape != pair.extent:
        raise DatasetError("Pair '%s': mask %s does not match images %s" % (pair.name, mask.shape, pair.extent))
    if mask.size and mask.max() > 1:
        raise DatasetError("Pair '%s': mask values must be 0 or 1" % pair.name)
    return mask



def _stems(path, ext):
    if not os.path.isdir(path):
        raise DatasetError("Missing dataset directory '%s'" % path)
    return set(os.path.splitext(n)[0] for n in os.listdir(path) if n.lower().endswith(ext))

def list_stems(root):
    "Sorted stems of a dataset directory, verifying every stem has all three files"
    a, b, l = _stems(os.path.join(root, 'A'), '.ppm'), _stems(os.path.join(root, 'B'), '.ppm'), _stems(os.path.join(root, 'label'), '.pgm')
    for name, own, others in (('A', a, b|l), ('B', b, a|l), ('label', l, a|b)):
        missing = others - own
        if missing:
            raise DatasetError("%s: no %s file for %s" % (root, name, ', '.join(sorted(missing))))
    return sorted(a)

def load_pair(root, stem):
    a = pnmutils.read_image(os.path.join(root, 'A', stem+'.ppm'))
    b = pnmutils.read_image(os.path.join(root, 'B', stem+'.ppm'))
    if a.ndim != 3 or b.ndim != 3:
        raise DatasetError("%s: '%s' images must be RGB (P6)" % (root, stem))
    if a.shape != b.shape:
        raise DatasetError("%s: '%s' images differ in extent, %s vs %s" % (root, stem, a.shape[1:], b.shape[1:]))
    try:
        mask = pnmutils.read_mask(os.path.join(root, 'label', stem+'.pgm'), a.shape)
    except pnmutils.PNMError as e:
        raise DatasetError(str(e))
    return ImagePair(a, b, stem), mask

def load_dataset(root, printn=None):
    "Loads every (ImagePair, mask) of a dataset directory, sorted by stem"
    items = []
    for stem in list_stems(root):
        items += [load_pair(root, stem)]
    if printn: printn("Loaded %d pairs from %s" % (len(items), root))
    if DEBUG&4: log("load_dataset: %s, %d pairs", root, len(items))
    return items

def save_pair(root, pair, mask):
    "Writes one pair in the A/ B/ label/ layout"
    pnmutils.write_image(os.path.join(root, 'A', pair.name+'.ppm'), pair.image_a)
    pnmutils.write_image(os.path.join(root, 'B', pair.name+'.ppm'), pair.image_b)
    pnmutils.write_mask(os.path.join(root, 'label', pair.name+'.pgm'), mask)

def select(items, names):
    "Items whose pair name is in names, in dataset order"
    names = set(names)
    return [it for it in items if it[0].name in names]



@dataclass
class AugmentPolicy:
    "Random training transforms"
    crop_size: int = 64 # 0 disables cropping
    scale_min: float = 0.5
    scale_max: float = 2.0
    flip: bool = True
    rotate: bool = True
    switch: bool = True
    align: int = 1 # output extents are multiples of this (2^stages when training)

    def __post_init__(self):
        if not 0 < self.scale_min <= self.scale_max:
            raise DatasetError("Bad scale range [%r, %r]" % (self.scale_min, self.scale_max))
        if self.crop_size < 0:
            raise DatasetError("Negative crop size %d" % self.crop_size)
        if self.align < 1 or self.crop_size % self.align:
            raise DatasetError("Crop size %d is not a multiple of %d" % (self.crop_size, self.align))


def resize_nearest(a, h, w):
    "Nearest neighbour resize of the last two axes to h x w"
    H, W = a.shape[-2:]
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(np.int64), H-1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(np.int64), W-1)
    return a[..., rows[:, None], cols[None, :]]

def crop_pad(a, top, left, size):
    "size x size window at (top, left); area beyond the image is zero"
    H, W = a.shape[-2:]
    out = np.zeros(a.shape[:-2] + (size, size), a.dtype)
    h, w = min(size, H-top), min(size, W-left)
    out[..., :h, :w] = a[..., top:top+h, left:left+w]
    return out

def hflip(a):
    return a[..., :, ::-1].copy()

def vflip(a):
    return a[..., ::-1, :].copy()

def rot90(a, k):
    return np.rot90(a, k, axes=(-2, -1)).copy()


def augment(pair, mask, rng, policy):
    """Applies one random geometric transform identically to both images and
    the mask, then randomly switches the images. Draw order is fixed
    (scale, crop offsets, flips, rotation, switch) whatever the policy.
    Without cropping, the scaled extent is rounded down to a multiple of
    policy.align."""
    H, W = pair.extent
    s = math.exp(rng.uniform(math.log(policy.scale_min), math.log(policy.scale_max)))
    hs, ws = max(1, int(round(H*s))), max(1, int(round(W*s)))
    c = policy.crop_size
    if not c:
        a = policy.align
        hs, ws = max(a, hs - hs % a), max(a, ws - ws % a)
    top = rng.integers(0, max(hs-c, 0)+1)
    left = rng.integers(0, max(ws-c, 0)+1)
    h_flip, v_flip = rng.random() < 0.5, rng.random() < 0.5
    k = rng.integers(0, 4)
    switch = rng.random() < 0.5

    def transform(x):
        if (hs, ws) != (H, W):
            x = resize_nearest(x, hs, ws)
        if c:
            x = crop_pad(x, top, left, c)
        if policy.flip:
            if h_flip: x = hflip(x)
            if v_flip: x = vflip(x)
        if policy.rotate and k:
            x = rot90(x, k)
        return x

    a, b, m = transform(pair.image_a), transform(pair.image_b), transform(mask)
    if policy.switch and switch:
        a, b = b, a
    if DEBUG&4: log("augment: %s scale %.3f crop (%d,%d) flips %d%d rot %d switch %d", pair.name, s, top, left, h_flip, v_flip, k, switch)
    return ImagePair(a, b, pair.name), m



def kfold_split(names, k):
    "Sorts names and cuts them in k contiguous folds; the first n%k folds get one more"
    names = sorted(names)
    n = len(names)
    if not 2 <= k <= n:
        raise DatasetError("Fold count %d out of range 2..%d" % (k, n))
    folds, pos = [], 0
    for i in range(k):
        size = n//k + (i < n%k)
        folds += [names[pos:pos+size]]
        pos += size
    return folds

def ratio_split(names, ratios=(7, 1, 2)):
    "Contiguous split of the sorted names by ratios, e.g. 7:1:2 train/val/test"
    names = sorted(names)
    if not ratios or min(ratios) < 0 or not sum(ratios):
        raise DatasetError("Bad split ratios %s" % (ratios,))
    total, n = float(sum(ratios)), len(names)
    bounds, acc = [0], 0
    for r in ratios:
        acc += r
        bounds += [int(round(n*acc/total))]
    return [names[bounds[i]:bounds[i+1]] for i in range(len(ratios))]
