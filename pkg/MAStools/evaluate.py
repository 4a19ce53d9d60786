# -*- coding: utf-8 -*-
"Change class metrics, dataset evaluation, cross validation, variant comparison and attention map export"

""" Counts are pooled over every pixel of every image before computing
    IoU = TP/(TP+FN+FP)    F1 = 2TP/(2TP+FN+FP)
Both are 0 when their denominator is 0: a dataset without change pixels
scored by an all non-change prediction gets 0, not 1. """

import os
from dataclasses import dataclass, replace
import numpy as np

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
from MAStools.utils import MASToolsError, makedirs
from MAStools import pnmutils
from MAStools.model import Model, load_checkpoint
from MAStools.dataset import load_dataset, kfold_split, select
from MAStools.attention import attention_weight_map, weighted_value_map
from MAStools import training


class EvalError(MASToolsError): pass


@dataclass(frozen=True)
class ConfusionCounts:
    "Pixel tallies of the change class"
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp+other.tp, self.fp+other.fp, self.fn+other.fn, self.tn+other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, truth):
    "Counts of a binary prediction against a binary change mask"
    pred, truth = np.asarray(pred).astype(bool), np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise EvalError("Prediction %s and mask %s differ in shape" % (pred.shape, truth.shape))
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)

def iou(c):
    d = c.tp + c.fn + c.fp
    return c.tp / d if d else 0.0

def f1(c):
    d = 2*c.tp + c.fn + c.fp
    return 2*c.tp / d if d else 0.0


def _pct(v):
    return '%6.2f' % (100*v)


class MetricReport(object):
    "IoU and F1 of the change class with the pooled counts"
    def __init__(self, counts, per_image=None):
        self.counts = counts
        self.iou = iou(counts)
        self.f1 = f1(counts)
        self.per_image = per_image # [(name, ConfusionCounts)] or None

    def __str__(self):
        return "MetricReport(iou=%.4f, f1=%.4f, %s)" % (self.iou, self.f1, self.counts)

    def table(self):
        c = self.counts
        L = ['metric      value',
             'IoU       %s' % _pct(self.iou),
             'F1        %s' % _pct(self.f1),
             'TP    %10d' % c.tp, 'FP    %10d' % c.fp, 'FN    %10d' % c.fn, 'TN    %10d' % c.tn]
        if self.per_image:
            L += ['', 'image           IoU      F1']
            L += ['%-12s %s  %s' % (name, _pct(iou(k)), _pct(f1(k))) for name, k in self.per_image]
        return '\n'.join(L)

    def keyvalues(self):
        c = self.counts
        return [('iou', self.iou), ('f1', self.f1), ('tp', c.tp), ('fp', c.fp), ('fn', c.fn), ('tn', c.tn)]


def as_model(model):
    "A Model, loading it when given a checkpoint path"
    if isinstance(model, Model):
        return model
    return load_checkpoint(model)

def as_items(dataset):
    if isinstance(dataset, str):
        return load_dataset(dataset)
    return list(dataset)


def evaluate(model, dataset, per_image=False):
    "Micro aggregated MetricReport of a model (or checkpoint path) over a dataset (or directory)"
    model, items = as_model(model), as_items(dataset)
    if not items:
        raise EvalError("Cannot evaluate on an empty dataset")
    total, L = ConfusionCounts(), []
    for pair, mask in items:
        c = confusion(model.predict(pair.image_a, pair.image_b), mask)
        total = total + c
        L += [(pair.name, c)]
    report = MetricReport(total, L if per_image else None)
    if DEBUG&16: log("evaluate: %d pairs, %s", len(items), report)
    return report



class CrossvalReport(object):
    "Per fold reports (seed averaged IoU/F1) and their mean"
    def __init__(self, folds, fold_iou, fold_f1, reports):
        self.folds = folds # names per fold
        self.fold_iou = fold_iou
        self.fold_f1 = fold_f1
        self.reports = reports # [[MetricReport per seed] per fold]
        self.mean_iou = float(np.mean(fold_iou))
        self.mean_f1 = float(np.mean(fold_f1))

    def __str__(self):
        return "CrossvalReport(%d folds, mean iou %.4f)" % (len(self.folds), self.mean_iou)

    def table(self):
        k = len(self.folds)
        head = '        ' + ''.join('  Fold %-2d' % (i+1) for i in range(k)) + '     Mean'
        row = lambda label, vals, m: '%-8s' % label + ''.join('   %s' % _pct(v) for v in vals) + '   %s' % _pct(m)
        return '\n'.join([head, row('IoU', self.fold_iou, self.mean_iou), row('F1', self.fold_f1, self.mean_f1)])

    def keyvalues(self):
        L = [('folds', len(self.folds))]
        for i in range(len(self.folds)):
            L += [('fold%d_size' % (i+1), len(self.folds[i])), ('fold%d_iou' % (i+1), self.fold_iou[i]), ('fold%d_f1' % (i+1), self.fold_f1[i])]
        return L + [('mean_iou', self.mean_iou), ('mean_f1', self.mean_f1)]


def crossval(model_cfg, dataset, k, seeds, train_cfg, policy=None, printn=None):
    """k-fold protocol on names sorted ascending: for each fold, train on the
    other k-1 folds with every seed and evaluate on the held out fold."""
    items = as_items(dataset)
    if k < 2:
        raise EvalError("Cross validation needs at least 2 folds")
    if not seeds:
        raise EvalError("Cross validation needs at least one seed")
    folds = kfold_split([it[0].name for it in items], k)
    fold_iou, fold_f1, reports = [], [], []
    for i, fold in enumerate(folds):
        test = select(items, fold)
        train_items = select(items, [n for j, f in enumerate(folds) if j != i for n in f])
        runs = []
        for seed in seeds:
            if printn: printn("Fold %d/%d, seed %d: %d training pairs, %d test pairs" % (i+1, k, seed, len(train_items), len(test)))
            result = training.train(model_cfg, train_items, replace(train_cfg, seed=seed), policy=policy)
            runs += [evaluate(result.model, test)]
        reports += [runs]
        fold_iou += [float(np.mean([r.iou for r in runs]))]
        fold_f1 += [float(np.mean([r.f1 for r in runs]))]
        if DEBUG&16: log("crossval fold %d: iou %r", i+1, fold_iou[-1])
    return CrossvalReport(folds, fold_iou, fold_f1, reports)



class ComparisonTable(object):
    "Mean and max-min spread of the test IoU per variant over repeated seeds"
    def __init__(self, names, ious):
        self.names = list(names)
        self.ious = ious # {name: [iou per seed]}
        self.mean = dict((n, float(np.mean(ious[n]))) for n in self.names)
        self.spread = dict((n, float(max(ious[n]) - min(ious[n]))) for n in self.names)
        ref = 'vanilla' if 'vanilla' in self.mean else self.names[0]
        self.reference = ref
        self.delta = dict((n, self.mean[n] - self.mean[ref]) for n in self.names)

    def __str__(self):
        return "ComparisonTable(%s)" % ', '.join('%s=%.4f' % (n, self.mean[n]) for n in self.names)

    def table(self):
        L = ['variant           IoU (mean +- spread)    delta vs %s' % self.reference]
        for n in self.names:
            L += ['%-16s  %s +- %5.2f          %+6.2f' % (n, _pct(self.mean[n]), 100*self.spread[n], 100*self.delta[n])]
        return '\n'.join(L)

    def keyvalues(self):
        L = []
        for n in self.names:
            L += [('%s_mean_iou' % n, self.mean[n]), ('%s_spread' % n, self.spread[n]), ('%s_delta' % n, self.delta[n])]
            L += [('%s_seed%d_iou' % (n, i), v) for i, v in enumerate(self.ious[n])]
        return L


def compare_variants(configs, train_data, test_data, n_seeds, train_cfg, policy=None, printn=None):
    """Trains every (name, ModelConfig) with seeds train_cfg.seed .. +n_seeds-1
    and evaluates each run on the test data"""
    if n_seeds < 1:
        raise EvalError("n_seeds must be at least 1")
    configs = list(configs.items()) if isinstance(configs, dict) else list(configs)
    train_items, test_items = as_items(train_data), as_items(test_data)
    ious, names = {}, []
    for name, cfg in configs:
        if name in ious:
            name = '%s_%d' % (name, len(names))
        names += [name]
        ious[name] = []
        for i in range(n_seeds):
            seed = train_cfg.seed + i
            if printn: printn("Training %s with seed %d" % (name, seed))
            result = training.train(cfg, train_items, replace(train_cfg, seed=seed), policy=policy)
            ious[name] += [evaluate(result.model, test_items).iou]
    table = ComparisonTable(names, ious)
    if DEBUG&16: log("compare_variants: %s", table)
    return table



def normalize_map(m):
    "Min-max scaling to 0..255; a constant map becomes all 0"
    m = np.asarray(m, np.float64)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros(m.shape, np.uint8)
    return np.floor((m - lo) / (hi - lo) * 255 + 0.5).astype(np.uint8)

def export_attention_maps(model, pair, out_dir):
    """Writes stage<s>_branch<b>_weights.pgm (post-softmax weights) and
    stage<s>_branch<b>_values.pgm (weighted value term) for every attention
    stage and branch. Returns the written paths."""
    model = as_model(model)
    if model.config.variant != 'masnet' or not model.attention:
        raise EvalError("Attention maps need a masnet checkpoint, got variant '%s'" % model.config.variant)
    makedirs(out_dir)
    f1, f2, acts = model.siamese_encode(pair.image_a, pair.image_b, keep_activations=True)
    paths = []
    for s in sorted(model.attention):
        H, W = f1[s].shape[1:]
        for b in (1, 2):
            for kind, m in (('weights', attention_weight_map(acts[s], b, H, W)), ('values', weighted_value_map(acts[s], b))):
                path = os.path.join(out_dir, 'stage%d_branch%d_%s.pgm' % (s, b, kind))
                pnmutils.write_raw(path, normalize_map(m))
                paths += [path]
    if DEBUG&16: log("export_attention_maps: %d files in %s", len(paths), out_dir)
    return paths
