# -*- coding: utf-8 -*-
"Self-attention and mutual-attention blocks at global, local and individual level"

""" TOKEN LAYOUTS
A C x H x W feature map is cut into groups of tokens; attention runs inside
each group independently and groups are stacked on the first axis, so every
level becomes a batch of small attention problems of shape G x n x width.

  global       1 group of H*W tokens, width C (row-major spatial order)
  local:hxw    (H/h)*(W/w) windows of h*w tokens, width C; windows and
               tokens inside a window are row-major
  individual   H*W groups, one per pixel: the pixel's C-vector becomes C
               tokens of width 1 (channel tokens), so the softmax runs over
               channels and yields a channel-attention map conditioned on the
               other image
  individual-literal
               one token of width C per pixel: the softmax over a single key
               is constantly 1 and the block degenerates to x + v

Global is computed as a local window covering the whole map, so both take
the same code path. Projections carry no bias: q = x.Wq^T, k = x.Wk^T,
v = x.Wv^T with one shared {Wq, Wk, Wv} for both branches. When d != C a
d -> C output projection Wo maps the weighted value back to C channels
before the residual add. At individual level the projections act on the
pixel's full C-vector and the d results are then viewed as d tokens of
width 1. """

import os, math
from dataclasses import dataclass
import numpy as np

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
from MAStools.utils import MASToolsError
from MAStools import tensor as T


class AttentionError(MASToolsError): pass


@dataclass(frozen=True)
class AttentionLevel:
    "Token granularity: 'global', 'local' (with window) or 'individual'"
    kind: str = 'individual'
    window_h: int = 0
    window_w: int = 0
    literal: bool = False

    def __post_init__(self):
        if self.kind not in ('global', 'local', 'individual'):
            raise AttentionError("Unknown attention level '%s'" % self.kind)
        if self.kind == 'local' and (self.window_h < 1 or self.window_w < 1):
            raise AttentionError("Local level needs a window of at least 1x1, got %dx%d" % (self.window_h, self.window_w))

    def __str__(self):
        if self.kind == 'local':
            return 'local:%dx%d' % (self.window_h, self.window_w)
        if self.kind == 'individual' and self.literal:
            return 'individual-literal'
        return self.kind

    @classmethod
    def parse(cls, s):
        "Parses 'global', 'local:HxW', 'individual' or 'individual-literal'"
        s = s.strip().lower()
        if s == 'global':
            return global_level()
        if s == 'individual':
            return individual_level()
        if s == 'individual-literal':
            return individual_level(literal=True)
        if s.startswith('local:'):
            try:
                h, w = [int(n) for n in s[6:].split('x')]
            except ValueError:
                raise AttentionError("Bad local window '%s', expected local:HxW" % s)
            return local_level(h, w)
        raise AttentionError("Unknown attention level '%s'" % s)

    def window(self, H, W):
        "Returns the (h, w) token window for an H x W map, checking divisibility"
        if self.kind == 'global':
            return H, W
        if self.kind == 'local':
            h, w = self.window_h, self.window_w
            if H % h or W % w:
                raise AttentionError("Feature map %dx%d is not divisible by the %dx%d local window" % (H, W, h, w))
            return h, w
        return 1, 1

    @property
    def channel_tokens(self):
        return self.kind == 'individual' and not self.literal


def global_level():
    return AttentionLevel('global')

def local_level(h, w):
    return AttentionLevel('local', h, w)

def individual_level(literal=False):
    return AttentionLevel('individual', literal=literal)



def tokenize(x, level):
    "Cuts a C x H x W map into a G x n x width token tensor"
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise AttentionError("tokenize expects a C x H x W feature map, got %s" % (x.shape,))
    C, H, W = x.shape
    if level.channel_tokens:
        t = T.transpose(T.reshape(x, (C, H*W)), (1, 0))
        return T.reshape(t, (H*W, C, 1))
    h, w = level.window(H, W)
    t = T.reshape(x, (C, H//h, h, W//w, w))
    t = T.transpose(t, (1, 3, 2, 4, 0))
    return T.reshape(t, ((H//h)*(W//w), h*w, C))

def detokenize(t, level, shape):
    "Inverse of tokenize for a C x H x W target shape"
    C, H, W = shape
    if level.channel_tokens:
        x = T.transpose(T.reshape(t, (H*W, C)), (1, 0))
        return T.reshape(x, (C, H, W))
    h, w = level.window(H, W)
    x = T.reshape(t, (H//h, W//w, h, w, C))
    x = T.transpose(x, (4, 0, 2, 1, 3))
    return T.reshape(x, (C, H, W))



class AttentionParams(object):
    """Shared projections of one attention block. Wq, Wk, Wv are d x C; Wo is
    C x d and exists only when d != C. No bias terms."""
    def __init__(self, channels, d, level, wq, wk, wv, wo=None):
        self.C = channels
        self.d = d
        self.level = level
        self.Wq, self.Wk, self.Wv = [T.as_tensor(w) for w in (wq, wk, wv)]
        self.Wo = None if wo is None else T.as_tensor(wo)
        for name, w in (('Wq', self.Wq), ('Wk', self.Wk), ('Wv', self.Wv)):
            if w.shape != (d, channels):
                raise AttentionError("%s must be %dx%d, got %s" % (name, d, channels, w.shape))
        if (d != channels) != (self.Wo is not None):
            raise AttentionError("An output projection is required exactly when d (%d) != C (%d)" % (d, channels))
        if self.Wo is not None and self.Wo.shape != (channels, d):
            raise AttentionError("Wo must be %dx%d, got %s" % (channels, d, self.Wo.shape))

    def __str__(self):
        return "AttentionParams(C=%d, d=%d, level=%s)" % (self.C, self.d, self.level)

    @classmethod
    def create(cls, channels, d, level, rng):
        "Random initialization, uniform in +-sqrt(1/fan_in)"
        if channels < 1 or d < 1:
            raise AttentionError("Channel width and d must be positive, got C=%d d=%d" % (channels, d))
        ws = [T.init_uniform((d, channels), channels, rng) for i in range(3)]
        wo = T.init_uniform((channels, d), d, rng) if d != channels else None
        return cls(channels, d, level, *ws, wo=wo)

    def parameters(self):
        "Named parameters in fixed order"
        L = [('wq', self.Wq), ('wk', self.Wk), ('wv', self.Wv)]
        if self.Wo is not None:
            L += [('wo', self.Wo)]
        return L

    def zero_values(self):
        "Zeroes the value path (Wv and Wo), which turns the block into the identity"
        self.Wv.data[...] = 0
        if self.Wo is not None:
            self.Wo.data[...] = 0


def attention_param_count(C, d, level=None):
    "3*C*d projection weights, plus d*C for the output projection when d != C"
    if C < 1 or d < 1:
        raise AttentionError("C and d must be positive, got C=%d d=%d" % (C, d))
    n = 3*C*d
    if d != C:
        n += d*C
    return n



class AttentionActivations(object):
    """Projected tokens of both branches and, after attention, the two
    post-softmax weight maps and the weighted value terms (as C x H x W maps)
    that were added to x1 and x2."""
    def __init__(self, q1, q2, k1, k2, v1, v2):
        self.q1, self.q2 = q1, q2
        self.k1, self.k2 = k1, k2
        self.v1, self.v2 = v1, v2
        self.weight_map_1 = self.weight_map_2 = None
        self.weighted_1 = self.weighted_2 = None
        self.level = None

    def weight_map(self, branch):
        return (self.weight_map_1, self.weight_map_2)[branch-1]

    def weighted(self, branch):
        return (self.weighted_1, self.weighted_2)[branch-1]


def _project(t, w, params):
    "Token projection t.W^T; at channel-token level the pixel vector is projected"
    if params.level.channel_tokens:
        G, n, width = t.shape
        y = T.matmul(T.reshape(t, (G, 1, n)), T.transpose(w))
        return T.reshape(y, (G, w.shape[0], 1))
    return T.matmul(t, T.transpose(w))

def project_qkv(x1, x2, params):
    """Applies the shared Wq, Wk, Wv to the token tensors of both branches.
    Tokens are G x n x C (or n x C), or G x C x 1 at channel-token level."""
    x1, x2 = T.as_tensor(x1), T.as_tensor(x2)
    if x1.shape != x2.shape:
        raise AttentionError("Token tensors differ in shape: %s vs %s" % (x1.shape, x2.shape))
    if params.level.channel_tokens:
        if x1.ndim != 3 or x1.shape[1:] != (params.C, 1):
            raise AttentionError("Channel tokens must be G x %d x 1, got %s" % (params.C, x1.shape))
    elif x1.shape[-1] != params.C:
        raise AttentionError("Token width %d does not match channel width %d" % (x1.shape[-1], params.C))
    q1, k1, v1 = [_project(x1, w, params) for w in (params.Wq, params.Wk, params.Wv)]
    q2, k2, v2 = [_project(x2, w, params) for w in (params.Wq, params.Wk, params.Wv)]
    return AttentionActivations(q1, q2, k1, k2, v1, v2)

def _attend(q, k, v, params):
    "softmax(q.k^T / sqrt(d)).v followed by the output projection; returns (weights, term)"
    kt = T.transpose(k, (0, 2, 1)) if k.ndim == 3 else T.transpose(k)
    weights = T.softmax(T.scale(T.matmul(q, kt), 1.0/math.sqrt(params.d)), axis=-1)
    term = T.matmul(weights, v)
    if params.Wo is not None:
        term = _project(term, params.Wo, params)
    return weights, term

def mutual_attention(x1, x2, params):
    """Mutual attention of two co-registered C x H x W maps:
        y1 = x1 + softmax(q2.k1^T / sqrt(d)).v1
        y2 = x2 + softmax(q1.k2^T / sqrt(d)).v2
    Returns (y1, y2, activations)."""
    x1, x2 = T.as_tensor(x1), T.as_tensor(x2)
    if x1.shape != x2.shape:
        raise AttentionError("Feature maps differ in shape: %s vs %s" % (x1.shape, x2.shape))
    if x1.ndim != 3 or x1.shape[0] != params.C:
        raise AttentionError("Expected a %d x H x W feature map, got %s" % (params.C, x1.shape))
    level = params.level
    acts = project_qkv(tokenize(x1, level), tokenize(x2, level), params)
    acts.weight_map_1, term1 = _attend(acts.q2, acts.k1, acts.v1, params)
    acts.weight_map_2, term2 = _attend(acts.q1, acts.k2, acts.v2, params)
    acts.weighted_1 = detokenize(term1, level, x1.shape)
    acts.weighted_2 = detokenize(term2, level, x2.shape)
    acts.level = level
    if DEBUG&2: log("mutual_attention: %s on %s, %d token groups", level, x1.shape, acts.q1.shape[0])
    return T.add(x1, acts.weighted_1), T.add(x2, acts.weighted_2), acts

def self_attention(x, params):
    "x + softmax(q.k^T / sqrt(d)).v with q, k, v all taken from x itself"
    x = T.as_tensor(x)
    if x.ndim != 3 or x.shape[0] != params.C:
        raise AttentionError("Expected a %d x H x W feature map, got %s" % (params.C, x.shape))
    t = tokenize(x, params.level)
    q, k, v = [_project(t, w, params) for w in (params.Wq, params.Wk, params.Wv)]
    weights, term = _attend(q, k, v, params)
    return T.add(x, detokenize(term, params.level, x.shape))



def _token_values_to_map(values, level, H, W):
    "Places one value per spatial token (G x n array) back on the H x W grid"
    h, w = level.window(H, W)
    m = values.reshape(H//h, W//w, h, w).transpose(0, 2, 1, 3)
    return m.reshape(H, W)

def attention_weight_map(acts, branch, H, W):
    """H x W reduction of one branch's post-softmax weights. Spatial levels:
    mean weight each key position receives from the queries of its group.
    Channel-token level: mean over channels of the self weight A[c, c]."""
    A = acts.weight_map(branch).data
    if acts.level.channel_tokens:
        return np.diagonal(A, axis1=1, axis2=2).mean(axis=1).reshape(H, W)
    return _token_values_to_map(A.mean(axis=1), acts.level, H, W)

def weighted_value_map(acts, branch):
    "Channel mean of the weighted value term added to that branch's features"
    return acts.weighted(branch).data.mean(axis=0)
