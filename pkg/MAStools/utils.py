# -*- coding: utf-8 -*-
import os, struct
from MAStools.debug import log
DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))


class MASToolsError(Exception):
    "Base class of all errors raised by MAStools"
    pass


def class2str(c, s):
    "Pretty-prints class contents"
    keys = list(c._kv.keys())
    keys.sort()
    for key in keys:
        o = c._kv[key][0]
        v = getattr(c, o)
        if type(v) == type(0):
            v = hex(v)
        s += '%x: %s = %s\n' % (key, o, v)
    return s

def common_getattr(c, name):
    "Decodes and stores an attribute following special class layout"
    try:
        i = c._vk[name]
    except KeyError:
        raise AttributeError(name)
    fmt = c._kv[i][1]
    cnt = struct.unpack_from(fmt, c._buf, i+c._i) [0]
    setattr(c, name,  cnt)
    return cnt

def pack(c):
    "Updates internal buffer"
    for k in list(c._kv.keys()):
        v = c._kv[k]
        c._buf[k:k+struct.calcsize(v[1])] = struct.pack(v[1], getattr(c, v[0]))
    return c._buf

def layout_size(layout):
    "Returns the byte size covered by a { offset: (name, fmt) } layout"
    return max(k + struct.calcsize(v[1]) for k, v in layout.items())


def makedirs(base, *subdirs):
    "Creates base and its subdirectories (if missing), returning their paths"
    paths = []
    for sub in subdirs or ('',):
        p = os.path.join(base, sub) if sub else base
        os.makedirs(p, exist_ok=True)
        paths += [p]
    if DEBUG&32: log("makedirs: %s", paths)
    return paths

def format_value(v):
    "Formats a scalar for key = value text so that parsing it back is exact"
    if isinstance(v, bool):
        return ('false', 'true')[v]
    if isinstance(v, float):
        return repr(v)
    return str(v)

def write_keyvalues(path, items, header=None):
    "Writes (key, value) pairs as line oriented 'key = value' text"
    with open(path, 'w', newline='\n') as f:
        if header:
            for line in header.splitlines():
                f.write('# %s\n' % line)
        for k, v in items:
            f.write('%s = %s\n' % (k, format_value(v)))

def read_keyvalues(path):
    """Parses 'key = value' text into an ordered list of (key, value, line_no).
    Blank lines and '#' comments are skipped; values stay strings."""
    items = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.split('#', 1)[0].strip()
            if not line: continue
            if '=' not in line:
                raise MASToolsError("%s:%d: expected 'key = value', got '%s'" % (path, n, line))
            k, v = line.split('=', 1)
            items += [(k.strip(), v.strip(), n)]
    return items
