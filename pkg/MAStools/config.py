# -*- coding: utf-8 -*-
"Command line configuration: one field table for flags, config files and the resolved echo"

""" Every setting is a field (name, group, type, default, help). A subcommand
declares the groups it uses; each field of those groups becomes a --flag
(underscores written as dashes) and a 'name = value' key of --config files.
Resolution order: defaults, then the config file, then explicit flags. Keys
from groups a command does not use are accepted and ignored, so one config
file may serve every command; unknown keys are usage errors. """

import os, argparse

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
from MAStools.utils import MASToolsError, read_keyvalues, write_keyvalues, format_value
from MAStools.attention import AttentionLevel
from MAStools.model import ModelConfig
from MAStools.training import TrainConfig, RECIPES
from MAStools.dataset import AugmentPolicy, load_dataset
from MAStools.synth import SynthConfig, generate_pair
from MAStools.tensor import Rng


class UsageError(MASToolsError): pass


def parse_bool(s):
    s = s.strip().lower()
    if s in ('1', 'true', 'yes', 'on'): return True
    if s in ('0', 'false', 'no', 'off'): return False
    raise ValueError("not a boolean: '%s'" % s)

def parse_ints(s):
    "Comma separated integers, e.g. 8,16"
    L = tuple(int(n) for n in s.split(',') if n.strip())
    if not L:
        raise ValueError("empty list")
    return L

def parse_stages(s):
    "'all' or comma separated stage indexes"
    if s.strip().lower() == 'all':
        return 'all'
    return tuple(int(n) for n in s.split(',') if n.strip())

def parse_level(s):
    return str(AttentionLevel.parse(s))

def parse_recipe(s):
    s = s.strip().lower()
    if s not in RECIPES:
        raise ValueError("one of %s" % ', '.join(RECIPES))
    return s

def parse_names(s):
    L = tuple(n.strip() for n in s.split(',') if n.strip())
    if not L:
        raise ValueError("empty list")
    return L

def format_field(v):
    if isinstance(v, tuple):
        return ','.join(str(n) for n in v)
    return format_value(v)


FIELDS = ( # (name, group, type, default, help)
('seed', 'run', int, 0, 'root seed, split into data, init, augment and sampler streams'),
('out', 'run', str, 'out', 'output directory'),
('data', 'run', str, None, 'dataset directory (A/ B/ label/); synthesized if missing'),
('test_data', 'run', str, None, 'test dataset directory'),
('val_data', 'run', str, None, 'validation dataset directory'),
('checkpoint', 'run', str, None, 'model checkpoint file'),
('pair', 'run', str, None, 'stem of the pair to visualize'),
('pairs', 'synth', int, 200, 'synthetic training pairs'),
('test_pairs', 'synth', int, 0, 'synthetic test pairs'),
('size', 'synth', int, 64, 'synthetic image side in pixels'),
('persistent', 'synth', int, 4, 'shapes present at both times'),
('changes', 'synth', int, 2, 'shapes added or removed'),
('jitter', 'synth', float, 0.1, 'photometric jitter amplitude of the second image'),
('noise', 'synth', float, 0.02, 'pixel noise amplitude'),
('variant', 'model', str, 'masnet', 'vanilla, masnet or early'),
('fusion', 'model', str, 'stack', 'stack, add or diff'),
('level', 'model', parse_level, 'individual', 'global, local:HxW, individual or individual-literal'),
('stages', 'model', parse_ints, (8, 16), 'encoder stage widths'),
('attention_stages', 'model', parse_stages, 'all', "stages followed by mutual attention, or 'all'"),
('attn_dim', 'model', int, 0, 'attention projection width, 0 = stage width'),
('upsample', 'model', str, 'nearest', 'decoder: nearest (stage by stage) or direct'),
('multiscale', 'model', parse_bool, False, 'fuse every stage and add skips in the decoder'),
('recipe', 'train', parse_recipe, 'paper', "base learning rate: 'paper' (%r) or 'desk' (%r)" % (RECIPES['paper'], RECIPES['desk'])),
('lr', 'train', float, None, 'base learning rate, overriding the recipe'),
('weight_decay', 'train', float, 0.01, 'AdamW decoupled weight decay'),
('warmup_iters', 'train', int, 150, 'linear warmup iterations'),
('max_iters', 'train', int, 2000, 'training iterations'),
('poly_power', 'train', float, 1.0, 'poly decay power'),
('batch_size', 'train', int, 4, 'pairs per iteration'),
('crop_size', 'train', int, 64, 'random crop side, a multiple of 2^stages; 0 = no crop'),
('checkpoint_every', 'train', int, 500, 'iterations between checkpoints, 0 = final only'),
('scale_min', 'train', float, 0.5, 'smallest random scale'),
('scale_max', 'train', float, 2.0, 'largest random scale'),
('flip', 'train', parse_bool, True, 'random flips'),
('rotate', 'train', parse_bool, True, 'random 90 degree rotations'),
('switch', 'train', parse_bool, True, 'randomly switch the two images'),
('split', 'train', parse_bool, False, 'split --data 7:1:2 into train, validation and test'),
('folds', 'eval', int, 4, 'cross validation folds'),
('n_seeds', 'eval', int, 3, 'training runs per fold or variant'),
('variants', 'eval', parse_names, ('vanilla', 'masnet', 'early'), 'variants to compare'),
)

FIELD = dict((f[0], f) for f in FIELDS)


def flag(name):
    return '--' + name.replace('_', '-')

def parse_field(name, text, source):
    "Converts text to the field type, naming the source on failure"
    fn = FIELD[name][2]
    try:
        return fn(text)
    except (ValueError, MASToolsError) as e:
        raise UsageError("%s: bad value '%s' (%s)" % (source, text, e))



class Parser(argparse.ArgumentParser):
    "ArgumentParser raising UsageError instead of exiting"
    def error(self, message):
        raise UsageError(message)


def add_arguments(par, groups):
    "Adds --config and the flags of the given groups"
    par.add_argument('--config', metavar='FILE', help="'key = value' file; explicit flags override it")
    for name, group, fn, default, help_s in FIELDS:
        if group not in groups: continue
        par.add_argument(flag(name), dest=name, default=None, metavar=name.upper(),
            help='%s (default: %s)' % (help_s, format_field(default)))
    return par


class RunConfig(object):
    "Resolved settings of one command"
    def __init__(self, command, groups, values, sources):
        self.command = command
        self.groups = groups
        self.values = values
        self.sources = sources # name: 'default', 'file' or 'flag'

    def __getattr__(self, name):
        values = self.__dict__.get('values')
        if values is None or name not in values:
            raise AttributeError(name)
        return values[name]

    def __str__(self):
        return "RunConfig(%s: %s)" % (self.command, ', '.join('%s=%s' % kv for kv in self.items()))

    def items(self):
        "(name, text) of the resolved fields, in table order"
        return [(f[0], format_field(self.values[f[0]])) for f in FIELDS
            if f[1] in self.groups and self.values[f[0]] is not None]

    def echo(self, argv=None):
        "Writes the resolved settings to <out>/config.txt"
        os.makedirs(self.out, exist_ok=True)
        path = os.path.join(self.out, 'config.txt')
        header = "mastools %s" % self.command
        if argv:
            header += "\n" + ' '.join(argv)
        write_keyvalues(path, self.items(), header)
        return path

    def model_config(self, variant=None):
        try:
            stages = self.attention_stages
            return ModelConfig(variant=variant or self.variant, fusion=self.fusion,
                channels=self.stages, attention_stages=None if stages == 'all' else stages,
                level=AttentionLevel.parse(self.level), d=self.attn_dim, upsample=self.upsample,
                multiscale=self.multiscale)
        except MASToolsError as e:
            raise UsageError("model configuration: %s" % e)

    def train_config(self):
        try:
            kw = dict(weight_decay=self.weight_decay, warmup_iters=self.warmup_iters,
                max_iters=self.max_iters, poly_power=self.poly_power, batch_size=self.batch_size,
                crop_size=self.crop_size, checkpoint_every=self.checkpoint_every, seed=self.seed)
            if self.lr is not None:
                kw['lr'] = self.lr
            return TrainConfig.recipe(self.recipe, **kw)
        except MASToolsError as e:
            raise UsageError("training configuration: %s" % e)

    def augment_policy(self):
        try:
            return AugmentPolicy(crop_size=self.crop_size, scale_min=self.scale_min, scale_max=self.scale_max,
                flip=self.flip, rotate=self.rotate, switch=self.switch)
        except MASToolsError as e:
            raise UsageError("augmentation: %s" % e)

    def synth_config(self):
        try:
            return SynthConfig(size=self.size, persistent=self.persistent, changes=self.changes,
                jitter=self.jitter, noise=self.noise, seed=self.seed)
        except MASToolsError as e:
            raise UsageError("synthetic data: %s" % e)


def resolve(args, command, groups, defaults=None):
    "Builds the RunConfig of a command from parsed arguments; defaults overrides table defaults"
    values, sources = {}, {}
    for name, group, fn, default, help_s in FIELDS:
        values[name], sources[name] = default, 'default'
    values.update(defaults or {})
    path = getattr(args, 'config', None)
    if path:
        try:
            items = read_keyvalues(path)
        except OSError as e:
            raise UsageError("cannot read config file: %s" % e)
        except MASToolsError as e:
            raise UsageError(str(e))
        for key, text, n in items:
            name = key.replace('-', '_')
            if name not in FIELD:
                raise UsageError("%s:%d: unknown key '%s'" % (path, n, key))
            values[name] = parse_field(name, text, "%s:%d: %s" % (path, n, key))
            sources[name] = 'file'
    for name, group, fn, default, help_s in FIELDS:
        if group not in groups: continue
        text = getattr(args, name, None)
        if text is not None:
            values[name] = parse_field(name, text, flag(name))
            sources[name] = 'flag'
    cfg = RunConfig(command, groups, values, sources)
    if DEBUG&32: log("resolve: %s", cfg)
    return cfg


def synth_items(cfg, n, tag='data'):
    "n synthetic pairs from the root seed's data stream ('test' pairs from its own child stream)"
    rng = Rng(cfg.seed).split('data')
    if tag != 'data':
        rng = rng.split(tag)
    sc = cfg.synth_config()
    return [generate_pair(sc, rng, '%04d' % i) for i in range(n)]

def dataset_items(cfg, path_field, count_field, tag='data', printn=None):
    "Pairs of the directory named by path_field, else count_field synthetic pairs"
    path = cfg.values[path_field]
    if path:
        return load_dataset(path, printn)
    n = cfg.values[count_field]
    if n < 1:
        raise UsageError("%s is required (or a positive %s to synthesize pairs)" % (flag(path_field), flag(count_field)))
    if printn: printn("Synthesizing %d pairs of %dx%d" % (n, cfg.size, cfg.size))
    return synth_items(cfg, n, tag)

def write_report(cfg, name, report):
    "Writes <out>/reports/<name>.txt: the table as comments, then key = value lines"
    d = os.path.join(cfg.out, 'reports')
    os.makedirs(d, exist_ok=True)
    path = os.path.join(d, name + '.txt')
    write_keyvalues(path, report.keyvalues(), report.table())
    return path
