# -*- coding: utf-8 -*-
import os, sys, argparse, logging
from MAStools import config
from MAStools.evaluate import evaluate

#~ logging.basicConfig(level=logging.DEBUG, filename='eval.log', filemode='w')

GROUPS = ('run', 'synth')


def create_parser(parser_create_fn=config.Parser, parser_create_args=None):
    help_s = """
    mastools eval --checkpoint FILE --data DIR [--out DIR]
    """
    par = parser_create_fn(*(parser_create_args or []), usage=help_s,
    formatter_class=argparse.RawDescriptionHelpFormatter,
    description="Evaluates a checkpoint: change class IoU and F1 over all pixels of a dataset.",
    epilog="The report goes to DIR/reports/eval.txt (table as comments, then key = value lines).\n")
    config.add_arguments(par, GROUPS)
    return par

def call(args):
    cfg = config.resolve(args, 'eval', GROUPS)
    if not cfg.checkpoint:
        raise config.UsageError("--checkpoint is required")
    if cfg.data:
        items = config.dataset_items(cfg, 'data', 'test_pairs', printn=print)
    else:
        items = config.dataset_items(cfg, 'test_data', 'test_pairs', 'test', printn=print)
    report = evaluate(cfg.checkpoint, items, per_image=True)
    cfg.echo(getattr(args, 'argv', None))
    print(report.table())
    print("Report written to %s" % config.write_report(cfg, 'eval', report))
    return 0

if __name__ == '__main__':
    par=create_parser()
    args = par.parse_args()
    sys.exit(call(args))
