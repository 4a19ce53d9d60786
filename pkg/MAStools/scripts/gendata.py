# -*- coding: utf-8 -*-
import os, sys, argparse, logging
from MAStools import config
from MAStools.synth import generate_dataset
from MAStools.tensor import Rng

#~ logging.basicConfig(level=logging.DEBUG, filename='gendata.log', filemode='w')

GROUPS = ('run', 'synth')


def create_parser(parser_create_fn=config.Parser, parser_create_args=None):
    help_s = """
    mastools gen-data --out DIR [--pairs N] [--test-pairs N] [--size S] [--seed N]
    """
    par = parser_create_fn(*(parser_create_args or []), usage=help_s,
    formatter_class=argparse.RawDescriptionHelpFormatter,
    description="Generates a synthetic change detection corpus (A/ B/ label/) with exact change masks.",
    epilog="Test pairs, if any, go to DIR/test. The same seed always gives byte identical files.\n")
    config.add_arguments(par, GROUPS)
    return par

def call(args):
    cfg = config.resolve(args, 'gen-data', GROUPS)
    sc = cfg.synth_config()
    rng = Rng(cfg.seed).split('data')
    generate_dataset(sc, cfg.out, cfg.pairs, rng, printn=print)
    if cfg.test_pairs:
        generate_dataset(sc, os.path.join(cfg.out, 'test'), cfg.test_pairs, rng.split('test'), printn=print)
    cfg.echo(getattr(args, 'argv', None))
    return 0

if __name__ == '__main__':
    par=create_parser()
    args = par.parse_args()
    sys.exit(call(args))
