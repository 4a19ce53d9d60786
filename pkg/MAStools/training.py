# -*- coding: utf-8 -*-
"Loss, AdamW optimizer, poly learning rate schedule and the training loop"

import os, shutil
from dataclasses import dataclass, replace
import numpy as np

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
from MAStools.utils import MASToolsError, makedirs
from MAStools import tensor as T
from MAStools.tensor import Rng, TensorError
from MAStools.model import Model, save_checkpoint
from MAStools.dataset import AugmentPolicy, augment, load_dataset
from MAStools.synth import SynthConfig, generate_pair
from MAStools import evaluate


class TrainingError(MASToolsError): pass


# Base learning rates: 'paper' is the published AdamW rate, 'desk' the rate
# tiny models need when trained from scratch on the synthetic corpus.
RECIPES = {'paper': 6e-5, 'desk': 2e-3}


@dataclass
class TrainConfig:
    "Optimization schedule (scaled down defaults)"
    lr: float = RECIPES['paper']
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_iters: int = 150
    max_iters: int = 2000
    poly_power: float = 1.0
    batch_size: int = 4
    crop_size: int = 64
    checkpoint_every: int = 500 # 0 = final checkpoint only
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.warmup_iters < self.max_iters:
            raise TrainingError("Need 0 <= warmup_iters (%d) < max_iters (%d)" % (self.warmup_iters, self.max_iters))
        if self.lr <= 0 or self.weight_decay < 0 or self.eps <= 0 or self.poly_power <= 0:
            raise TrainingError("Rates must be positive (lr %r, weight_decay %r, eps %r, power %r)" % (self.lr, self.weight_decay, self.eps, self.poly_power))
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise TrainingError("Adam betas must be in [0,1)")
        if self.batch_size < 1 or self.checkpoint_every < 0:
            raise TrainingError("Bad batch size %d or checkpoint interval %d" % (self.batch_size, self.checkpoint_every))

    @classmethod
    def recipe(cls, name, **kw):
        "A TrainConfig whose base learning rate comes from RECIPES[name]"
        if name not in RECIPES:
            raise TrainingError("Unknown training recipe '%s' (%s)" % (name, ', '.join(RECIPES)))
        kw.setdefault('lr', RECIPES[name])
        return cls(**kw)



def cross_entropy_loss(logits, mask):
    "Mean over pixels of -log softmax(logits)[target] for 2 x H x W logits"
    logits = T.as_tensor(logits)
    mask = np.asarray(mask)
    if logits.ndim != 3 or logits.shape[0] != 2 or logits.shape[1:] != mask.shape:
        raise TrainingError("Logits %s do not match a %s mask" % (logits.shape, mask.shape))
    onehot = np.stack([mask == 0, mask == 1]).astype(logits.dtype)
    picked = T.sum(T.mul(T.log_softmax(logits, axis=0), onehot))
    return T.scale(picked, -1.0/mask.size)


def lr_at(it, cfg):
    "Linear warmup from 0, then poly decay to 0 at max_iters"
    if not 0 <= it <= cfg.max_iters:
        raise TrainingError("Iteration %d outside 0..%d" % (it, cfg.max_iters))
    if it < cfg.warmup_iters:
        return cfg.lr * it / cfg.warmup_iters
    return cfg.lr * (1.0 - (it - cfg.warmup_iters) / (cfg.max_iters - cfg.warmup_iters)) ** cfg.poly_power


class OptimizerState(object):
    "Per parameter AdamW moments and the step counter"
    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0

    def __str__(self):
        return "OptimizerState(t=%d, %d tensors)" % (self.t, len(self.m))


def adamw_step(params, grads, state, lr, cfg):
    """One decoupled weight decay Adam step, in place:
        m = b1.m + (1-b1).g    v = b2.v + (1-b2).g^2
        p = p - lr.(m^/(sqrt(v^)+eps) + wd.p)
    'params' is a sequence of (name, Tensor); a missing gradient counts as 0."""
    state.t += 1
    t = state.t
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, p in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise TrainingError("Gradient of '%s' has shape %s, parameter %s" % (name, g.shape, p.shape))
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps) + cfg.weight_decay * p.data
        p.data -= (lr * update).astype(p.dtype)
    return state



class Sampler(object):
    "Seed shuffled epochs without replacement; batches may straddle epochs"
    def __init__(self, n, rng):
        if n < 1:
            raise TrainingError("No training pairs")
        self.n = n
        self.rng = rng
        self.order = []
        self.epoch = 0

    def take(self, k):
        batch = []
        while len(batch) < k:
            if not self.order:
                self.order = list(self.rng.permutation(self.n))
                self.epoch += 1
            batch += [int(self.order.pop(0))]
        return batch


def batch_loss(model, batch):
    "Mean cross entropy over a list of (ImagePair, mask), recorded on the active tape"
    total = None
    for pair, mask in batch:
        logits, acts = model.forward_pair(pair)
        l = cross_entropy_loss(logits, mask)
        total = l if total is None else T.add(total, l)
    return T.scale(total, 1.0/len(batch))

def train_step(model, batch, state, lr, cfg):
    "Forward, backward and AdamW update on one batch; returns the loss value"
    model.zero_grad()
    with T.Tape() as tape:
        loss = batch_loss(model, batch)
    tape.backward(loss)
    grads = dict((name, t.grad) for name, t in model.parameters())
    adamw_step(model.parameters(), grads, state, lr, cfg)
    for name, t in model.parameters():
        if not np.isfinite(t.data).all():
            raise TensorError("non-finite values in parameter '%s' after the update" % name)
    return loss.item()


class TrainResult(object):
    "Trained model plus the per iteration history and written files"
    def __init__(self, model):
        self.model = model
        self.lrs = []
        self.losses = []
        self.checkpoints = []
        self.validation = [] # (iteration, MetricReport)
        self.best = None # (iteration, iou)
        self.final = None

    def __str__(self):
        return "TrainResult(%d iterations, last loss %s, best %s)" % (len(self.losses), self.losses[-1] if self.losses else None, self.best)


def resolve_data(data, n_pairs=0, rng=None):
    "Training items from a list of (pair, mask), a dataset directory or a SynthConfig"
    if isinstance(data, str):
        return load_dataset(data)
    if isinstance(data, SynthConfig):
        rng = rng or Rng(data.seed).split('data')
        return [generate_pair(data, rng, '%04d' % i) for i in range(n_pairs)]
    return list(data)


def train(model_cfg, data, cfg, out_dir=None, val_data=None, policy=None, model=None, synth_pairs=200, printn=None):
    """Trains a model from the generators split off cfg.seed ('init', 'augment',
    'sampler', 'data'). With out_dir, writes logs/train.log (iteration, lr,
    loss per line) and checkpoints/iter_NNNNNN.ckpt, final.ckpt and, when
    validation data is given, best.ckpt (highest change class IoU)."""
    root = Rng(cfg.seed)
    items = resolve_data(data, synth_pairs, root.split('data'))
    val_items = resolve_data(val_data) if val_data is not None else []
    model = model or Model.create(model_cfg, root.split('init'))
    aug_rng, sampler = root.split('augment'), Sampler(len(items), root.split('sampler'))
    policy = policy or AugmentPolicy(crop_size=cfg.crop_size)
    align = 2**model.config.n_stages
    if policy.crop_size % align:
        raise TrainingError("Crop size %d is not a multiple of %d (2^stages)" % (policy.crop_size, align))
    policy = replace(policy, align=align)
    state = OptimizerState()
    result = TrainResult(model)
    logf = ckdir = None
    if out_dir:
        logdir, ckdir = makedirs(out_dir, 'logs', 'checkpoints')
        logf = open(os.path.join(logdir, 'train.log'), 'w', newline='\n')
    if printn: printn("Training %s on %d pairs for %d iterations" % (model, len(items), cfg.max_iters))
    try:
        for it in range(cfg.max_iters):
            lr = lr_at(it, cfg)
            batch = [augment(items[i][0], items[i][1], aug_rng, policy) for i in sampler.take(cfg.batch_size)]
            try:
                loss = train_step(model, batch, state, lr, cfg)
            except TensorError as e:
                raise TrainingError("Iteration %d: %s" % (it, e))
            result.lrs += [lr]
            result.losses += [loss]
            if logf:
                logf.write("%d\t%r\t%r\n" % (it, lr, loss))
            if DEBUG&8: log("iter %d lr %r loss %r", it, lr, loss)
            if printn and (it+1) % 100 == 0:
                printn("iter %d/%d lr %.3g loss %.4f" % (it+1, cfg.max_iters, lr, loss))
            done = it+1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.max_iters:
                _checkpoint(result, ckdir, 'iter_%06d.ckpt' % done, done, val_items, printn)
        _checkpoint(result, ckdir, 'final.ckpt', cfg.max_iters, val_items, printn)
    finally:
        if logf: logf.close()
    if ckdir and result.best:
        best_path = os.path.join(ckdir, 'iter_%06d.ckpt' % result.best[0]) if result.best[0] < cfg.max_iters else result.final
        shutil.copyfile(best_path, os.path.join(ckdir, 'best.ckpt'))
    return result

def _checkpoint(result, ckdir, name, it, val_items, printn):
    if ckdir:
        path = os.path.join(ckdir, name)
        save_checkpoint(result.model, path)
        result.checkpoints += [path]
        if name == 'final.ckpt':
            result.final = path
    if val_items:
        report = evaluate.evaluate(result.model, val_items)
        result.validation += [(it, report)]
        if result.best is None or report.iou > result.best[1]:
            result.best = (it, report.iou)
        if DEBUG&8: log("validation at %d: iou %r f1 %r", it, report.iou, report.f1)
        if printn: printn("validation at iter %d: IoU %.4f F1 %.4f" % (it, report.iou, report.f1))
