# -*- coding: utf-8 -*-
"Binary netpbm codec: PPM (P6) for RGB images, PGM (P5) for masks and maps"

import os
import numpy as np

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
from MAStools.utils import MASToolsError


class PNMError(MASToolsError): pass


MAGICS = {b'P5': 1, b'P6': 3} # magic: channels


def quantize(x):
    "Maps [0,1] floats to 8 bits as round(v*255), halves rounded up"
    x = np.clip(np.asarray(x, np.float64), 0.0, 1.0)
    return np.floor(x*255 + 0.5).astype(np.uint8)

def dequantize(u):
    return u.astype(np.float32) / 255


def parse_header(s):
    """Parses 'Px width height maxval' with '#' comments between fields.
    Returns (channels, width, height, data offset)."""
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(s) and s[pos:pos+1].isspace():
            pos += 1
        if s[pos:pos+1] == b'#':
            nl = s.find(b'\n', pos)
            if nl < 0:
                raise PNMError("Unterminated comment in header")
            pos = nl + 1
            continue
        start = pos
        while pos < len(s) and not s[pos:pos+1].isspace() and s[pos:pos+1] != b'#':
            pos += 1
        if start == pos:
            raise PNMError("Truncated header after %d fields" % len(fields))
        fields += [s[start:pos]]
    if fields[0] not in MAGICS:
        raise PNMError("Unknown netpbm magic %r (binary P5/P6 only)" % fields[0])
    try:
        width, height, maxval = [int(f) for f in fields[1:]]
    except ValueError:
        raise PNMError("Non numeric header fields %r" % (fields[1:],))
    if width < 1 or height < 1:
        raise PNMError("Bad image extent %dx%d" % (width, height))
    if maxval != 255:
        raise PNMError("Only 8-bit images (maxval 255) are supported, got %d" % maxval)
    if pos >= len(s) or not s[pos:pos+1].isspace():
        raise PNMError("Missing whitespace after maxval")
    return MAGICS[fields[0]], width, height, pos + 1


def decode(s, shape=None):
    "Decodes a P5/P6 byte string into an 8-bit H x W (P5) or 3 x H x W (P6) array"
    channels, width, height, pos = parse_header(s)
    n = width*height*channels
    if len(s) - pos != n:
        raise PNMError("Expected %d bytes of %dx%d pixel data, found %d" % (n, width, height, len(s) - pos))
    a = np.frombuffer(s, np.uint8, n, pos)
    if channels == 1:
        a = a.reshape(height, width)
    else:
        a = a.reshape(height, width, 3).transpose(2, 0, 1)
    if shape is not None and a.shape[-2:] != tuple(shape)[-2:]:
        raise PNMError("Image extent %dx%d does not match the expected %dx%d" % (width, height, shape[-1], shape[-2]))
    return a.copy()

def encode(u):
    "Encodes an 8-bit H x W array as P5 or a 3 x H x W array as P6"
    u = np.asarray(u, np.uint8)
    if u.ndim == 2:
        h, w = u.shape
        return b'P5\n%d %d\n255\n' % (w, h) + u.tobytes()
    if u.ndim == 3 and u.shape[0] == 3:
        c, h, w = u.shape
        return b'P6\n%d %d\n255\n' % (w, h) + u.transpose(1, 2, 0).tobytes()
    raise PNMError("Cannot encode an array of shape %s (H x W or 3 x H x W)" % (u.shape,))


def read_raw(path, shape=None):
    with open(path, 'rb') as f:
        s = f.read()
    try:
        a = decode(s, shape)
    except PNMError as e:
        raise PNMError("%s: %s" % (path, e))
    if DEBUG&4: log("read_raw: %s %s", path, a.shape)
    return a

def write_raw(path, u):
    with open(path, 'wb') as f:
        f.write(encode(u))
    if DEBUG&4: log("write_raw: %s %s", path, np.shape(u))


def write_image(path, x):
    "Writes a [0,1] image (3 x H x W, or H x W grey) quantized to 8 bits"
    write_raw(path, quantize(getattr(x, 'data', x)))

def read_image(path, shape=None):
    "Reads an image back as float32 values in [0,1]"
    return dequantize(read_raw(path, shape))

def write_mask(path, mask):
    "Writes a binary H x W mask as a PGM of {0,255}"
    m = np.asarray(mask)
    if m.ndim != 2:
        raise PNMError("A mask must be H x W, got %s" % (m.shape,))
    write_raw(path, np.where(m > 0, 255, 0).astype(np.uint8))

def read_mask(path, shape=None):
    "Reads a PGM mask: values above 127 are change (1), others 0"
    a = read_raw(path, shape)
    if a.ndim != 2:
        raise PNMError("%s: a mask must be a greyscale (P5) image" % path)
    return (a > 127).astype(np.uint8)
