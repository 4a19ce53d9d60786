# -*- coding: utf-8 -*-
import os, sys, argparse, logging
from MAStools import config
from MAStools.evaluate import crossval

#~ logging.basicConfig(level=logging.DEBUG, filename='crossval.log', filemode='w')

GROUPS = ('run', 'synth', 'model', 'train', 'eval')


def create_parser(parser_create_fn=config.Parser, parser_create_args=None):
    help_s = """
    mastools crossval --out DIR [--data DIR] [--folds 4] [--n-seeds 3] [model and training flags]
    """
    par = parser_create_fn(*(parser_create_args or []), usage=help_s,
    formatter_class=argparse.RawDescriptionHelpFormatter,
    description="K-fold cross validation: pairs sorted by name are cut in contiguous folds; each fold\nis tested by models trained on the others, with every seed.",
    epilog="Per fold IoU/F1 and their mean go to DIR/reports/crossval.txt.\n")
    config.add_arguments(par, GROUPS)
    return par

def call(args):
    cfg = config.resolve(args, 'crossval', GROUPS)
    model_cfg, train_cfg, policy = cfg.model_config(), cfg.train_config(), cfg.augment_policy()
    if cfg.n_seeds < 1:
        raise config.UsageError("--n-seeds must be at least 1")
    items = config.dataset_items(cfg, 'data', 'pairs', printn=print)
    cfg.echo(getattr(args, 'argv', None))
    seeds = [cfg.seed + i for i in range(cfg.n_seeds)]
    report = crossval(model_cfg, items, cfg.folds, seeds, train_cfg, policy, printn=print)
    print(report.table())
    print("Report written to %s" % config.write_report(cfg, 'crossval', report))
    return 0

if __name__ == '__main__':
    par=create_parser()
    args = par.parse_args()
    sys.exit(call(args))
