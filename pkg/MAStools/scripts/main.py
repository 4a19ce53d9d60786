import sys, importlib
from MAStools import config
from MAStools.utils import MASToolsError


scripts = {'gen-data': 'gendata', 'train': 'train', 'eval': 'eval', 'crossval': 'crossval', 'compare': 'compare', 'attn-maps': 'attnmaps'}


def main(argv=None):
    "Runs a subcommand; returns 0 on success, 1 on usage errors, 2 on runtime errors"
    argv = sys.argv[1:] if argv is None else list(argv)
    help_s = "Usage: mastools " + '|'.join(scripts)

    if not argv:
        print("You must specify a command to perform!\n\n" + help_s)
        return 1

    if argv[0] not in scripts:
        print("Bad command '%s' specified!\n\n%s" % (argv[0], help_s))
        return 1

    par = config.Parser(prog='mastools', usage=help_s)
    subparsers = par.add_subparsers(help="command to perform")
    for x in scripts:
        mod = importlib.import_module("MAStools.scripts.%s" % scripts[x])
        subpar = mod.create_parser(subparsers.add_parser, [x])
        subpar.set_defaults(func=mod.call)
    try:
        args = par.parse_args(argv)
        args.argv = argv
        return args.func(args) or 0
    except config.UsageError as e:
        print("mastools %s error: %s" % (argv[0], e), file=sys.stderr)
        return 1
    except (MASToolsError, OSError) as e:
        print("mastools %s error: %s" % (argv[0], e), file=sys.stderr)
        return 2

if __name__ == '__main__':
    sys.exit(main())
