# -*- coding: utf-8 -*-
import os, sys, argparse, logging
from MAStools import config
from MAStools.evaluate import compare_variants

#~ logging.basicConfig(level=logging.DEBUG, filename='compare.log', filemode='w')

GROUPS = ('run', 'synth', 'model', 'train', 'eval')
DEFAULTS = {'recipe': 'desk'}


def create_parser(parser_create_fn=config.Parser, parser_create_args=None):
    help_s = """
    mastools compare --out DIR [--data DIR --test-data DIR] [--variants vanilla,masnet,early] [--n-seeds 3]
    """
    par = parser_create_fn(*(parser_create_args or []), usage=help_s,
    formatter_class=argparse.RawDescriptionHelpFormatter,
    description="Trains every variant with n seeds and compares their test IoU (mean and max-min spread)\nagainst the vanilla siamese baseline. Runs the desk recipe unless --recipe or --lr is given.",
    epilog="The table goes to DIR/reports/compare.txt. Without --test-data, --test-pairs synthetic pairs are used.\n")
    config.add_arguments(par, GROUPS)
    return par

def call(args):
    cfg = config.resolve(args, 'compare', GROUPS, DEFAULTS)
    train_cfg, policy = cfg.train_config(), cfg.augment_policy()
    configs = [(v, cfg.model_config(v)) for v in cfg.variants]
    if cfg.n_seeds < 1:
        raise config.UsageError("--n-seeds must be at least 1")
    items = config.dataset_items(cfg, 'data', 'pairs', printn=print)
    test = config.dataset_items(cfg, 'test_data', 'test_pairs', 'test', printn=print)
    cfg.echo(getattr(args, 'argv', None))
    table = compare_variants(configs, items, test, cfg.n_seeds, train_cfg, policy, printn=print)
    print(table.table())
    print("Report written to %s" % config.write_report(cfg, 'compare', table))
    return 0

if __name__ == '__main__':
    par=create_parser()
    args = par.parse_args()
    sys.exit(call(args))
