# -*- coding: utf-8 -*-
"Siamese change detection models: encoder stages, fusion, decoder, checkpoints"

""" MODEL LAYOUT
Encoder stage s is a 3x3, stride 2, padding 1 convolution (with bias) followed
by relu: C[s-1] x H x W -> C[s] x H/2 x W/2, where C[-1] is the image depth
(3, or 6 for the early fusion variant that stacks both images).

  vanilla   both images run through the same encoder parameters
  masnet    like vanilla, with a mutual attention block after every enabled
            stage; its outputs feed the next stage
  early     a single branch over the 6-band stacked pair, no fusion

The two branch maps of the deepest stage (or of every stage, if multiscale)
are fused by 'stack' (channel concatenation + 1x1 conv 2C -> C), 'add' or
'diff'. The 'nearest' decoder climbs back one stage at a time (upsample x2,
3x3 conv down to the previous stage width, relu, plus the fused skip of that
stage when multiscale) and ends with upsample x2 and a 3x3 conv to 2 logits
(non-change, change). The 'direct' decoder upsamples once by 2^n.

Parameters are named and ordered encoder, attention, fusion, decoder; each
group draws its initial values from its own split of the init generator, so
variants built from one seed share every common parameter. """

import os, struct
from collections import OrderedDict
from dataclasses import dataclass, field, replace
import numpy as np

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
if DEBUG&4: import hexdump
from MAStools import utils
from MAStools.utils import MASToolsError
from MAStools import tensor as T
from MAStools.attention import AttentionLevel, AttentionParams, mutual_attention, attention_param_count


class ModelError(MASToolsError): pass


VARIANTS = ('vanilla', 'masnet', 'early')
FUSIONS = ('stack', 'add', 'diff')
UPSAMPLERS = ('nearest', 'direct')


@dataclass
class ModelConfig:
    "Architecture of a change detection model"
    variant: str = 'masnet'
    fusion: str = 'stack'
    channels: tuple = (8, 16) # per stage output width
    attention_stages: tuple = None # stage indexes with mutual attention, None = all (masnet only)
    level: AttentionLevel = field(default_factory=AttentionLevel)
    d: int = 0 # attention projection width, 0 = stage width
    upsample: str = 'nearest'
    multiscale: bool = False
    in_channels: int = 0 # 0 = 3 (6 for early fusion)

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if isinstance(self.level, str):
            self.level = AttentionLevel.parse(self.level)
        if self.variant not in VARIANTS:
            raise ModelError("Unknown model variant '%s'" % self.variant)
        if self.fusion not in FUSIONS:
            raise ModelError("Unknown fusion strategy '%s'" % self.fusion)
        if self.upsample not in UPSAMPLERS:
            raise ModelError("Unknown decoder upsampling '%s'" % self.upsample)
        if not self.in_channels:
            self.in_channels = (3, 6)[self.variant == 'early']
        if self.variant == 'early' and self.in_channels != 6:
            raise ModelError("Early fusion stacks both images: encoder input must have 6 channels, not %d" % self.in_channels)
        if self.variant != 'early' and self.in_channels != 3:
            raise ModelError("Siamese branches take 3-channel images, not %d" % self.in_channels)
        if not self.channels or min(self.channels) < 1:
            raise ModelError("Bad stage widths %s" % (self.channels,))
        widths = (self.in_channels,) + self.channels
        if any(b < a for a, b in zip(widths, widths[1:])):
            raise ModelError("Stage widths must not decrease: %s" % (widths,))
        if self.d < 0:
            raise ModelError("Negative attention width %d" % self.d)
        if self.multiscale and self.upsample != 'nearest':
            raise ModelError("Multiscale decoding needs the 'nearest' decoder")
        if self.attention_stages is not None:
            self.attention_stages = tuple(sorted(set(int(s) for s in self.attention_stages)))
            for s in self.attention_stages:
                if not 0 <= s < self.n_stages:
                    raise ModelError("Attention stage %d out of range 0..%d" % (s, self.n_stages-1))
            if len(self.attention_stages) == self.n_stages:
                self.attention_stages = None
        if self.variant == 'masnet' and not any(self.attention_enabled):
            raise ModelError("A masnet model needs at least one attention stage")

    @property
    def n_stages(self):
        return len(self.channels)

    @property
    def attention_enabled(self):
        "Per stage flags"
        if self.variant != 'masnet':
            return (False,)*self.n_stages
        if self.attention_stages is None:
            return (True,)*self.n_stages
        return tuple(s in self.attention_stages for s in range(self.n_stages))

    def stage_d(self, s):
        return self.d or self.channels[s]

    def fused_stages(self):
        "Stages whose branch maps reach the decoder"
        if self.multiscale:
            return list(range(self.n_stages))
        return [self.n_stages-1]

    def variant_of(self, variant):
        "Same architecture as another variant (attention stages kept only for masnet)"
        return replace(self, variant=variant, in_channels=0,
            attention_stages=self.attention_stages if variant == 'masnet' else None)



def param_shapes(cfg):
    """Lists (group, name, shape, fan_in) for every parameter, in checkpoint
    order. 'group' tags the generator each parameter is drawn from."""
    L = []
    widths = (cfg.in_channels,) + cfg.channels
    for s in range(cfg.n_stages):
        fan = 9*widths[s]
        L += [('encoder', 'encoder.%d.weight' % s, (widths[s+1], widths[s], 3, 3), fan),
              ('encoder', 'encoder.%d.bias' % s, (widths[s+1],), fan)]
    for s, on in enumerate(cfg.attention_enabled):
        if not on: continue
        C, d = cfg.channels[s], cfg.stage_d(s)
        tag = 'attention.%d' % s
        L += [(tag, tag+'.'+n, (d, C), C) for n in ('wq', 'wk', 'wv')]
        if d != C:
            L += [(tag, tag+'.wo', (C, d), d)]
    if cfg.variant != 'early' and cfg.fusion == 'stack':
        for s in cfg.fused_stages():
            C = cfg.channels[s]
            L += [('fusion', 'fusion.%d.weight' % s, (C, 2*C, 1, 1), 2*C),
                  ('fusion', 'fusion.%d.bias' % s, (C,), 2*C)]
    if cfg.upsample == 'nearest':
        for s in range(cfg.n_stages-1, 0, -1):
            Ci, Co = cfg.channels[s], cfg.channels[s-1]
            L += [('decoder', 'decoder.%d.weight' % s, (Co, Ci, 3, 3), 9*Ci),
                  ('decoder', 'decoder.%d.bias' % s, (Co,), 9*Ci)]
        Ci = cfg.channels[0]
    else:
        Ci = cfg.channels[-1]
    L += [('decoder', 'decoder.head.weight', (2, Ci, 3, 3), 9*Ci),
          ('decoder', 'decoder.head.bias', (2,), 9*Ci)]
    return L


def count_params(cfg):
    "Exact parameter breakdown {encoder, attention, fusion, decoder, total, attention_fraction, overhead}"
    counts = OrderedDict((k, 0) for k in ('encoder', 'attention', 'fusion', 'decoder'))
    for s, on in enumerate(cfg.attention_enabled):
        if on:
            counts['attention'] += attention_param_count(cfg.channels[s], cfg.stage_d(s), cfg.level)
    for group, name, shape, fan in param_shapes(cfg):
        if group.startswith('attention'): continue
        counts[group] += int(np.prod(shape))
    total = sum(counts.values())
    counts['total'] = total
    counts['attention_fraction'] = counts['attention'] / total
    counts['overhead'] = counts['attention'] / (total - counts['attention'])
    return counts


def fuse(f1, f2, strategy, weight=None, bias=None):
    "Fuses two C x H x W maps into one C x H x W map"
    f1, f2 = T.as_tensor(f1), T.as_tensor(f2)
    if f1.shape != f2.shape:
        raise ModelError("Cannot fuse maps of shapes %s and %s" % (f1.shape, f2.shape))
    if strategy == 'diff':
        return T.sub(f1, f2)
    if strategy == 'add':
        return T.add(f1, f2)
    if strategy == 'stack':
        if weight is None:
            raise ModelError("Stack fusion needs a 1x1 pointwise kernel")
        return T.conv2d(T.concat([f1, f2], axis=0), weight, bias)
    raise ModelError("Unknown fusion strategy '%s'" % strategy)



class Model(object):
    "A change detection network: configuration plus named parameter tensors"
    def __init__(self, config, params):
        self.config = config
        self.params = OrderedDict(params)
        expected = [(name, shape) for g, name, shape, fan in param_shapes(config)]
        got = [(name, t.shape) for name, t in self.params.items()]
        if expected != got:
            raise ModelError("Parameters do not match the configuration: expected %s, got %s" % (expected, got))
        self.attention = {}
        for s, on in enumerate(config.attention_enabled):
            if not on: continue
            p = lambda n: self.params.get('attention.%d.%s' % (s, n))
            self.attention[s] = AttentionParams(config.channels[s], config.stage_d(s), config.level,
                p('wq'), p('wk'), p('wv'), wo=p('wo'))

    def __str__(self):
        c = self.config
        return "Model(%s, fusion=%s, channels=%s, level=%s, %d parameters)" % (c.variant, c.fusion, c.channels, c.level, self.param_count())

    @classmethod
    def create(cls, config, rng):
        "Randomly initialized model; each parameter group uses rng.split(group)"
        streams = {}
        params = OrderedDict()
        for group, name, shape, fan in param_shapes(config):
            if group not in streams:
                streams[group] = rng.split(group)
            params[name] = T.init_uniform(shape, fan, streams[group])
        if DEBUG&2: log("Model.create: %s with %d tensors", config.variant, len(params))
        return cls(config, params)

    def parameters(self):
        return list(self.params.items())

    def param_count(self):
        return sum(t.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def zero_attention_values(self):
        "Zeroes every attention value path, making the model equal to its vanilla counterpart"
        for a in self.attention.values():
            a.zero_values()

    def _stage(self, s, x):
        p = self.params
        return T.relu(T.conv2d(x, p['encoder.%d.weight' % s], p['encoder.%d.bias' % s], stride=2, padding=1))

    def check_input(self, x1, x2=None):
        if x2 is not None and x2.shape != x1.shape:
            raise ModelError("Images of a pair differ in shape: %s vs %s" % (x1.shape, x2.shape))
        if x1.ndim != 3 or x1.shape[0] != 3:
            raise ModelError("Expected 3 x H x W images, got %s" % (x1.shape,))
        C, H, W = x1.shape
        k = 2**self.config.n_stages
        if H % k or W % k:
            raise ModelError("Image extent %dx%d is not divisible by %d (2^stages)" % (H, W, k))

    def siamese_encode(self, x1, x2, keep_activations=False):
        """Runs both images through the shared encoder, with mutual attention
        after every enabled stage. Returns per stage lists (f1, f2, acts)."""
        if self.config.variant == 'early':
            raise ModelError("The early fusion variant has a single branch")
        x1, x2 = T.as_tensor(x1), T.as_tensor(x2)
        self.check_input(x1, x2)
        f1, f2, acts = [], [], []
        for s in range(self.config.n_stages):
            x1, x2 = self._stage(s, x1), self._stage(s, x2)
            a = None
            if s in self.attention:
                x1, x2, a = mutual_attention(x1, x2, self.attention[s])
            f1 += [x1]
            f2 += [x2]
            acts += [a if keep_activations else None]
        return f1, f2, acts

    def encode(self, x):
        "Single branch encoder (early fusion): per stage feature maps"
        feats = []
        for s in range(self.config.n_stages):
            x = self._stage(s, x)
            feats += [x]
        return feats

    def fuse_stage(self, s, f1, f2):
        p = self.params
        return fuse(f1, f2, self.config.fusion, p.get('fusion.%d.weight' % s), p.get('fusion.%d.bias' % s))

    def decode(self, fused):
        """Logits 2 x H_in x W_in from the deepest fused map, or from a
        {stage: fused map} dictionary when multiscale"""
        cfg = self.config
        p = self.params
        if not isinstance(fused, dict):
            fused = {cfg.n_stages-1: fused}
        x = fused[cfg.n_stages-1]
        if cfg.upsample == 'direct':
            x = T.upsample_nearest(x, 2**cfg.n_stages)
        else:
            for s in range(cfg.n_stages-1, 0, -1):
                x = T.upsample_nearest(x, 2)
                x = T.relu(T.conv2d(x, p['decoder.%d.weight' % s], p['decoder.%d.bias' % s], padding=1))
                if cfg.multiscale:
                    x = T.add(x, fused[s-1])
            x = T.upsample_nearest(x, 2)
        return T.conv2d(x, p['decoder.head.weight'], p['decoder.head.bias'], padding=1)

    def forward(self, x1, x2, keep_activations=False):
        "Returns (logits, per stage activations or None)"
        cfg = self.config
        x1, x2 = T.as_tensor(x1), T.as_tensor(x2)
        if cfg.variant == 'early':
            self.check_input(x1, x2)
            x = T.concat([x1, x2], axis=0)
            if x.shape[0] != cfg.in_channels:
                raise ModelError("Early fusion input has %d channels, expected %d" % (x.shape[0], cfg.in_channels))
            feats = self.encode(x)
            fused = {s: feats[s] for s in cfg.fused_stages()}
            acts = None
        else:
            f1, f2, acts = self.siamese_encode(x1, x2, keep_activations)
            fused = {s: self.fuse_stage(s, f1[s], f2[s]) for s in cfg.fused_stages()}
            if not keep_activations:
                acts = None
        logits = self.decode(fused)
        if DEBUG&2: log("forward: %s -> logits %s", x1.shape, logits.shape)
        return logits, acts

    def forward_pair(self, pair, keep_activations=False):
        return self.forward(pair.image_a, pair.image_b, keep_activations)

    def predict(self, x1, x2):
        "H x W change map (argmax over the logits, ties to non-change)"
        logits, acts = self.forward(x1, x2)
        return np.argmax(logits.data, axis=0).astype(np.uint8)



""" CHECKPOINT FORMAT (little endian)
    header      5s magic 'MASN1', <I number of configuration entries
    entries     <H tag, <H index, <i value (8 bytes each)
    count       <Q number of parameter values
    values      float32 parameter values, tensors in param_shapes() order """

MAGIC = b'MASN1'

TAG_VARIANT, TAG_FUSION, TAG_LEVEL, TAG_WINDOW_H, TAG_WINDOW_W, TAG_LITERAL, TAG_D, \
TAG_UPSAMPLE, TAG_IN_CHANNELS, TAG_STAGES, TAG_CHANNELS, TAG_ATTENTION, TAG_MULTISCALE = range(1, 14)

LEVELS = ('global', 'local', 'individual')


class checkpoint_header(object):
    "Checkpoint file header"
    layout = { # { offset: (name, unpack string) }
    0x00: ('sMagic', '5s'),
    0x05: ('dwEntries', '<I'),
    } # Size = 9 bytes

    def __init__ (self, s=None):
        self._i = 0
        self._buf = s or bytearray(utils.layout_size(self.layout))
        self._kv = self.layout.copy()
        self._vk = {} # { name: offset}
        for k, v in list(self._kv.items()):
            self._vk[v[0]] = k

    __getattr__ = utils.common_getattr

    def __str__ (self):
        return utils.class2str(self, "Checkpoint header @%x\n" % self._i)

    pack = utils.pack


class config_entry(object):
    "Tagged integer of the model configuration"
    layout = { # { offset: (name, unpack string) }
    0x00: ('wTag', '<H'),
    0x02: ('wIndex', '<H'),
    0x04: ('lValue', '<i'),
    } # Size = 8 bytes

    def __init__ (self, s=None, tag=0, index=0, value=0):
        self._i = 0
        self._buf = s or bytearray(8)
        self._kv = self.layout.copy()
        self._vk = {} # { name: offset}
        for k, v in list(self._kv.items()):
            self._vk[v[0]] = k
        if s is None:
            self.wTag, self.wIndex, self.lValue = tag, index, value

    __getattr__ = utils.common_getattr

    def __str__ (self):
        return utils.class2str(self, "Config entry\n")

    pack = utils.pack


def config_entries(cfg):
    "Encodes a ModelConfig as (tag, index, value) triples"
    L = [(TAG_VARIANT, 0, VARIANTS.index(cfg.variant)),
         (TAG_FUSION, 0, FUSIONS.index(cfg.fusion)),
         (TAG_LEVEL, 0, LEVELS.index(cfg.level.kind)),
         (TAG_WINDOW_H, 0, cfg.level.window_h),
         (TAG_WINDOW_W, 0, cfg.level.window_w),
         (TAG_LITERAL, 0, int(cfg.level.literal)),
         (TAG_D, 0, cfg.d),
         (TAG_UPSAMPLE, 0, UPSAMPLERS.index(cfg.upsample)),
         (TAG_IN_CHANNELS, 0, cfg.in_channels),
         (TAG_STAGES, 0, cfg.n_stages),
         (TAG_MULTISCALE, 0, int(cfg.multiscale))]
    L += [(TAG_CHANNELS, i, c) for i, c in enumerate(cfg.channels)]
    L += [(TAG_ATTENTION, i, int(on)) for i, on in enumerate(cfg.attention_enabled)]
    return L

def config_from_entries(entries):
    "Inverse of config_entries"
    scalars, channels, attention = {}, {}, {}
    for tag, index, value in entries:
        if tag == TAG_CHANNELS:
            channels[index] = value
        elif tag == TAG_ATTENTION:
            attention[index] = value
        elif TAG_VARIANT <= tag <= TAG_MULTISCALE:
            scalars[tag] = value
        else:
            raise ModelError("Unknown checkpoint configuration tag %d" % tag)
    try:
        n = scalars[TAG_STAGES]
        kind = LEVELS[scalars[TAG_LEVEL]]
        if kind == 'local':
            level = AttentionLevel('local', scalars[TAG_WINDOW_H], scalars[TAG_WINDOW_W])
        else:
            level = AttentionLevel(kind, literal=bool(scalars[TAG_LITERAL]))
        variant = VARIANTS[scalars[TAG_VARIANT]]
        return ModelConfig(variant=variant,
            fusion=FUSIONS[scalars[TAG_FUSION]],
            channels=tuple(channels[i] for i in range(n)),
            attention_stages=tuple(i for i in range(n) if attention.get(i)) if variant == 'masnet' else None,
            level=level,
            d=scalars[TAG_D],
            upsample=UPSAMPLERS[scalars[TAG_UPSAMPLE]],
            multiscale=bool(scalars[TAG_MULTISCALE]),
            in_channels=scalars[TAG_IN_CHANNELS])
    except (KeyError, IndexError) as e:
        raise ModelError("Incomplete or invalid checkpoint configuration (%s)" % e)


def save_checkpoint(model, path):
    "Writes model configuration and float32 parameters"
    entries = config_entries(model.config)
    h = checkpoint_header()
    h.sMagic = MAGIC
    h.dwEntries = len(entries)
    buf = bytearray(h.pack())
    for tag, index, value in entries:
        buf += config_entry(tag=tag, index=index, value=value).pack()
    values = np.concatenate([t.data.ravel() for t in model.params.values()]).astype('<f4')
    buf += struct.pack('<Q', values.size)
    if DEBUG&4: log("save_checkpoint header:\n%s", hexdump.hexdump(bytes(buf), 'return'))
    buf += values.tobytes()
    with open(path, 'wb') as f:
        f.write(buf)
    if DEBUG&4: log("save_checkpoint: %s, %d values", path, values.size)

def load_checkpoint(path):
    "Reads a checkpoint written by save_checkpoint, returning a Model"
    with open(path, 'rb') as f:
        s = f.read()
    hsize = utils.layout_size(checkpoint_header.layout)
    if len(s) < hsize:
        raise ModelError("'%s' is too short to be a checkpoint" % path)
    h = checkpoint_header(bytearray(s[:hsize]))
    if h.sMagic != MAGIC:
        raise ModelError("'%s' is not a checkpoint (bad magic %r)" % (path, h.sMagic))
    pos = hsize
    entries = []
    for i in range(h.dwEntries):
        if pos + 8 > len(s):
            raise ModelError("'%s': truncated configuration block" % path)
        e = config_entry(bytearray(s[pos:pos+8]))
        entries += [(e.wTag, e.wIndex, e.lValue)]
        pos += 8
    if DEBUG&4: log("load_checkpoint header:\n%s", hexdump.hexdump(s[:pos+8], 'return'))
    cfg = config_from_entries(entries)
    if pos + 8 > len(s):
        raise ModelError("'%s': missing parameter count" % path)
    count = struct.unpack_from('<Q', s, pos)[0]
    pos += 8
    shapes = param_shapes(cfg)
    expected = sum(int(np.prod(shape)) for g, n, shape, fan in shapes)
    if count != expected:
        raise ModelError("'%s': holds %d parameter values, its configuration needs %d" % (path, count, expected))
    if len(s) - pos != 4*count:
        raise ModelError("'%s': %d bytes of parameter data, expected %d" % (path, len(s) - pos, 4*count))
    values = np.frombuffer(s, '<f4', count, pos)
    params = OrderedDict()
    i = 0
    for group, name, shape, fan in shapes:
        n = int(np.prod(shape))
        params[name] = T.Tensor(values[i:i+n].reshape(shape), requires_grad=True)
        i += n
    if DEBUG&4: log("load_checkpoint: %s, %s", path, cfg)
    return Model(cfg, params)
