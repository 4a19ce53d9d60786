# -*- coding: utf-8 -*-
import os, sys, argparse, logging
from MAStools import config
from MAStools.dataset import ratio_split, select
from MAStools.training import train
from MAStools.evaluate import evaluate

#~ logging.basicConfig(level=logging.DEBUG, filename='train.log', filemode='w')

GROUPS = ('run', 'synth', 'model', 'train')


def create_parser(parser_create_fn=config.Parser, parser_create_args=None):
    help_s = """
    mastools train --out DIR [--data DIR] [--val-data DIR] [--variant masnet] [--max-iters N] [--seed N]
    """
    par = parser_create_fn(*(parser_create_args or []), usage=help_s,
    formatter_class=argparse.RawDescriptionHelpFormatter,
    description="Trains a change detection model with AdamW, warmup and poly learning rate decay.",
    epilog="Writes DIR/logs/train.log, DIR/checkpoints/*.ckpt and DIR/config.txt.\nWithout --data, --pairs synthetic pairs are generated from the seed.\n")
    config.add_arguments(par, GROUPS)
    return par

def call(args):
    cfg = config.resolve(args, 'train', GROUPS)
    model_cfg, train_cfg, policy = cfg.model_config(), cfg.train_config(), cfg.augment_policy()
    items = config.dataset_items(cfg, 'data', 'pairs', printn=print)
    val = config.dataset_items(cfg, 'val_data', 'pairs', printn=print) if cfg.val_data else None
    test = None
    if cfg.split and val is None:
        tr, va, te = ratio_split([it[0].name for it in items])
        items, val, test = select(items, tr), select(items, va), select(items, te)
        print("Split 7:1:2 into %d training, %d validation and %d test pairs" % (len(items), len(val), len(test)))
    cfg.echo(getattr(args, 'argv', None))
    result = train(model_cfg, items, train_cfg, cfg.out, val or None, policy, printn=print)
    print("Final checkpoint: %s" % result.final)
    if result.best:
        print("Best validation IoU %.4f at iteration %d" % (result.best[1], result.best[0]))
    if test:
        best = os.path.join(cfg.out, 'checkpoints', 'best.ckpt') if result.best else result.final
        report = evaluate(best, test)
        print(report.table())
        print("Report written to %s" % config.write_report(cfg, 'eval', report))
    return 0

if __name__ == '__main__':
    par=create_parser()
    args = par.parse_args()
    sys.exit(call(args))
