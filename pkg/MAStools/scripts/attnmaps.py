# -*- coding: utf-8 -*-
import os, sys, argparse, logging
from MAStools import config
from MAStools.dataset import load_pair
from MAStools.evaluate import export_attention_maps

#~ logging.basicConfig(level=logging.DEBUG, filename='attnmaps.log', filemode='w')

GROUPS = ('run', 'synth')


def create_parser(parser_create_fn=config.Parser, parser_create_args=None):
    help_s = """
    mastools attn-maps --checkpoint FILE --out DIR [--data DIR --pair STEM]
    """
    par = parser_create_fn(*(parser_create_args or []), usage=help_s,
    formatter_class=argparse.RawDescriptionHelpFormatter,
    description="Exports the mutual attention maps of a masnet checkpoint for one pair: per attention\nstage and branch, the mean attention weight map and the weighted value map.",
    epilog="Maps are min-max scaled PGM files in DIR/maps. Without --data, the first synthetic test pair is used.\n")
    config.add_arguments(par, GROUPS)
    return par

def call(args):
    cfg = config.resolve(args, 'attn-maps', GROUPS)
    if not cfg.checkpoint:
        raise config.UsageError("--checkpoint is required")
    if cfg.data:
        if not cfg.pair:
            raise config.UsageError("--pair is required with --data")
        pair, mask = load_pair(cfg.data, cfg.pair)
    else:
        pair, mask = config.synth_items(cfg, 1, 'test')[0]
    cfg.echo(getattr(args, 'argv', None))
    paths = export_attention_maps(cfg.checkpoint, pair, os.path.join(cfg.out, 'maps'))
    print("%d attention maps of pair '%s' written to %s" % (len(paths), pair.name, os.path.join(cfg.out, 'maps')))
    return 0

if __name__ == '__main__':
    par=create_parser()
    args = par.parse_args()
    sys.exit(call(args))
