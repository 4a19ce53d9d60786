# -*- coding: utf-8 -*-
"Dense tensors with reverse-mode automatic differentiation over numpy arrays"

""" HOW RECORDING WORKS
Every primitive below computes its result with numpy. If a Tape is active in
the calling thread (with Tape() as tape: ...) and at least one input requires
a gradient, the primitive appends an entry (op name, inputs, output, backward
closure) to that tape. Entries are appended in execution order, so the tape is
topologically sorted by construction and a single reverse walk propagates the
gradient of a scalar loss back to every leaf tensor that requires it.

Outside a tape nothing is recorded: this is the inference path.

Broadcasting is limited to two cases: equal shapes, or one operand being a
0-d scalar. Everything else is a TensorError.

The default float type is 32-bit. verification_mode() switches the whole stack
to 64-bit floats, which grad_check() requires. """

import os, threading, zlib, math
import numpy as np

DEBUG=int(os.getenv('MASTOOLS_DEBUG', '0'))
from MAStools.debug import log
from MAStools.utils import MASToolsError


class TensorError(MASToolsError): pass


_DTYPES = {32: np.float32, 64: np.float64}
_dtype = np.float32

def set_precision(bits):
    "Selects the default float width (32 or 64 bits) for newly created tensors"
    global _dtype
    if bits not in _DTYPES:
        raise TensorError("Unsupported precision %r, use 32 or 64" % (bits,))
    _dtype = _DTYPES[bits]
    if DEBUG&1: log("set_precision: %d bits", bits)

def precision():
    return (32, 64)[_dtype is np.float64]

def default_dtype():
    return _dtype


class verification_mode(object):
    "Context manager running the enclosed code with 64-bit floats"
    def __enter__(self):
        self.saved = precision()
        set_precision(64)
        return self

    def __exit__(self, *exc):
        set_precision(self.saved)



def _check(a, op):
    if any(n <= 0 for n in a.shape):
        raise TensorError("%s: tensor extents must be positive, got %s" % (op, a.shape))
    if not np.isfinite(a).all():
        raise TensorError("%s: non-finite values (NaN/Inf) in result" % op)


class Tensor(object):
    "Dense n-dimensional array, optionally participating in a Tape"
    __array_priority__ = 1000 # ndarray <op> Tensor defers to Tensor

    def __init__(self, data, requires_grad=False, dtype=None):
        a = np.array(data, dtype=dtype or _dtype)
        _check(a, 'Tensor')
        self.data = a
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None # tape that recorded this tensor as an output

    @classmethod
    def _wrap(cls, data, op):
        "Wraps a freshly computed array without copying it"
        t = cls.__new__(cls)
        data = np.asarray(data)
        if not data.flags.c_contiguous:
            data = data.copy()
        _check(data, op)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._tape = None
        return t

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s, requires_grad=%d)" % (self.shape, self.data.dtype, self.requires_grad)

    @property
    def shape(self): return self.data.shape

    @property
    def ndim(self): return self.data.ndim

    @property
    def size(self): return self.data.size

    @property
    def dtype(self): return self.data.dtype

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def backward(self):
        "Propagates d(self)/d(leaf) through the tape that recorded self"
        if self._tape is None:
            raise TensorError("backward() on a tensor that was not recorded on a Tape")
        self._tape.backward(self)

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    def __truediv__(self, s):
        if isinstance(s, Tensor):
            raise TensorError("division is only supported by a Python scalar")
        return scale(self, 1.0/s)



_local = threading.local()

def active_tape():
    "Returns the innermost Tape active in this thread, or None"
    stack = getattr(_local, 'tapes', None)
    return stack[-1] if stack else None


class TapeEntry(object):
    __slots__ = ('op', 'inputs', 'output', 'backward')

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward

    def __str__(self):
        return "%s(%s) -> %s" % (self.op, ', '.join(str(t.shape) for t in self.inputs), self.output.shape)


class Tape(object):
    """Ordered record of primitive operations. A Tape belongs to the thread
    that entered it; one backward() traversal fills .grad of every leaf that
    requires it and is reachable from the loss."""
    def __init__(self):
        self.entries = []

    def __enter__(self):
        if not hasattr(_local, 'tapes'):
            _local.tapes = []
        _local.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.remove(self)

    def __len__(self):
        return len(self.entries)

    def record(self, op, inputs, output, backward):
        self.entries.append(TapeEntry(op, inputs, output, backward))
        output._tape = self

    def backward(self, loss, grad=None):
        "Reverse traversal accumulating gradients into the leaves' .grad"
        if grad is None:
            if loss.size != 1:
                raise TensorError("backward needs a scalar loss, got shape %s" % (loss.shape,))
            grad = np.ones(loss.shape, loss.dtype)
        grads = {id(loss): np.asarray(grad, loss.dtype)}
        leaves = {}
        if loss.requires_grad and loss._tape is None:
            leaves[id(loss)] = loss
        for e in reversed(self.entries):
            g = grads.pop(id(e.output), None)
            if g is None: continue
            for t, gi in zip(e.inputs, e.backward(g)):
                if gi is None or not t.requires_grad: continue
                k = id(t)
                grads[k] = grads[k] + gi if k in grads else gi
                if t._tape is None:
                    leaves[k] = t
        for k, t in leaves.items():
            g = np.asarray(grads[k], t.dtype).reshape(t.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g
        if DEBUG&1: log("Tape.backward: %d entries, %d leaves", len(self.entries), len(leaves))



def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)

def _result(op, data, inputs, backward):
    out = Tensor._wrap(data, op)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward)
    return out

def _operands(a, b, op):
    "Checks the scalar-or-equal-shape broadcasting rule"
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim and b.ndim:
        raise TensorError("%s: incompatible shapes %s and %s" % (op, a.shape, b.shape))
    dtype = (a if a.ndim else b).dtype
    return a, b, dtype

def _unbroadcast(g, t):
    if t.ndim == 0 and g.ndim:
        return np.asarray(g.sum(), g.dtype)
    return g



def add(a, b):
    a, b, dt = _operands(a, b, 'add')
    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)
    return _result('add', (a.data + b.data).astype(dt, copy=False), (a, b), backward)

def sub(a, b):
    a, b, dt = _operands(a, b, 'sub')
    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)
    return _result('sub', (a.data - b.data).astype(dt, copy=False), (a, b), backward)

def mul(a, b):
    a, b, dt = _operands(a, b, 'mul')
    A, B = a.data, b.data
    def backward(g):
        return _unbroadcast((g*B).astype(dt, copy=False), a), _unbroadcast((g*A).astype(dt, copy=False), b)
    return _result('mul', (A * B).astype(dt, copy=False), (a, b), backward)

def scale(x, s):
    "Multiplies by a Python scalar constant"
    x = as_tensor(x)
    s = float(s)
    def backward(g):
        return (g * s,)
    return _result('scale', x.data * s, (x,), backward)

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    def backward(g):
        return (g * mask,)
    return _result('relu', np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), backward)

ELEMENTWISE = {'add': add, 'sub': sub, 'mul': mul, 'scale': scale, 'relu': relu}

def elementwise(op, *operands):
    "Applies one of add, sub, mul, scale, relu by name"
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise TensorError("Unknown elementwise operation '%s'" % op)
    return fn(*operands)



def matmul(a, b):
    """Matrix product [m x k] @ [k x n]. Batched forms [G x m x k] @ [k x n]
    and [G x m x k] @ [G x k x n] are accepted too."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or b.ndim > a.ndim:
        raise TensorError("matmul: unsupported operand ranks %s @ %s" % (a.shape, b.shape))
    if a.shape[-1] != b.shape[-2]:
        raise TensorError("matmul: inner extents differ in %s @ %s" % (a.shape, b.shape))
    if b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise TensorError("matmul: batch extents differ in %s @ %s" % (a.shape, b.shape))
    A, B = a.data, b.data
    def backward(g):
        if B.ndim == 2:
            ga = g @ B.T
            if A.ndim == 2:
                gb = A.T @ g
            else:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = g @ B.transpose(0, 2, 1)
            gb = A.transpose(0, 2, 1) @ g
        return ga, gb
    return _result('matmul', A @ B, (a, b), backward)

def softmax(x, axis=-1):
    "Normalized exponential along axis, computed after max subtraction"
    x = as_tensor(x)
    X = x.data
    e = np.exp(X - X.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    def backward(g):
        return (y * (g - (g*y).sum(axis=axis, keepdims=True)),)
    return _result('softmax', y, (x,), backward)

def log_softmax(x, axis=-1):
    x = as_tensor(x)
    X = x.data
    z = X - X.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)
    return _result('log_softmax', y, (x,), backward)

def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2D cross-correlation (no kernel flip) of a C_in x H x W map with a
    C_out x C_in x kh x kw kernel, zero padding on both sides"""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise TensorError("conv2d: expected C x H x W input and 4-D kernel, got %s and %s" % (x.shape, kernel.shape))
    C, H, W = x.shape
    Co, Ci, kh, kw = kernel.shape
    if Ci != C:
        raise TensorError("conv2d: kernel expects %d input channels, input has %d" % (Ci, C))
    if not kh%2 or not kw%2:
        raise TensorError("conv2d: kernel extents must be odd, got %dx%d" % (kh, kw))
    if stride < 1 or padding < 0:
        raise TensorError("conv2d: bad stride %d or padding %d" % (stride, padding))
    p = padding
    Ho = (H + 2*p - kh)//stride + 1
    Wo = (W + 2*p - kw)//stride + 1
    if Ho <= 0 or Wo <= 0:
        raise TensorError("conv2d: non-positive output extent %dx%d" % (Ho, Wo))
    X = x.data
    if p:
        X = np.pad(X, ((0, 0), (p, p), (p, p)))
    K = kernel.data
    def window(i, j):
        return (slice(None), slice(i, i + stride*(Ho-1) + 1, stride), slice(j, j + stride*(Wo-1) + 1, stride))
    out = np.zeros((Co, Ho, Wo), x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += np.tensordot(K[:, :, i, j], X[window(i, j)], axes=(1, 0))
    inputs = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (Co,):
            raise TensorError("conv2d: bias shape %s does not match %d output channels" % (bias.shape, Co))
        out += bias.data[:, None, None]
        inputs = (x, kernel, bias)
    def backward(g):
        gX = np.zeros_like(X)
        gK = np.zeros_like(K)
        for i in range(kh):
            for j in range(kw):
                w = window(i, j)
                gK[:, :, i, j] = np.tensordot(g, X[w], axes=([1, 2], [1, 2]))
                gX[w] += np.tensordot(K[:, :, i, j], g, axes=(0, 0))
        if p:
            gX = gX[:, p:p+H, p:p+W]
        if bias is None:
            return gX, gK
        return gX, gK, g.sum(axis=(1, 2))
    return _result('conv2d', out, inputs, backward)



def reshape(x, shape):
    x = as_tensor(x)
    src = x.shape
    def backward(g):
        return (g.reshape(src),)
    return _result('reshape', np.array(x.data.reshape(shape)), (x,), backward)

def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    def backward(g):
        return (np.transpose(g, inverse),)
    return _result('transpose', np.transpose(x.data, axes).copy(), (x,), backward)

def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))
    return _result('concat', np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)

def sum(x, axis=None):
    x = as_tensor(x)
    src = x.shape
    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)
    return _result('sum', np.asarray(x.data.sum(axis=axis), x.dtype), (x,), backward)

def mean(x, axis=None):
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0/n)

def upsample_nearest(x, factor):
    "Nearest-neighbour upsampling of a C x H x W map by an integer factor"
    x = as_tensor(x)
    if x.ndim != 3 or factor < 1:
        raise TensorError("upsample_nearest: bad input %s or factor %r" % (x.shape, factor))
    C, H, W = x.shape
    f = int(factor)
    def backward(g):
        return (g.reshape(C, H, f, W, f).sum(axis=(2, 4)),)
    return _result('upsample', x.data.repeat(f, axis=1).repeat(f, axis=2), (x,), backward)



class GradCheckReport(object):
    "Outcome of a finite-difference gradient check"
    def __init__(self, max_rel_err, tolerance, checked, worst=None):
        self.max_rel_err = max_rel_err
        self.tolerance = tolerance
        self.checked = checked
        self.worst = worst # (input index, coordinate, analytic, numeric)
        self.passed = max_rel_err < tolerance

    def __str__(self):
        return "grad_check: %s, max rel err %.3g over %d coordinates (tolerance %g), worst %s" % (
            ('FAILED', 'passed')[self.passed], self.max_rel_err, self.checked, self.tolerance, self.worst)


def grad_check(f, x, eps=1e-5, tolerance=1e-4, sample=None, rng=None):
    """Compares tape gradients of the scalar f(x) with central differences
    (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps). 'x' is a Tensor or a list of
    Tensors and is passed to f as given. If 'sample' is set, only that many
    coordinates (chosen by rng) are checked."""
    if _dtype is not np.float64:
        raise TensorError("grad_check requires verification mode (64-bit precision)")
    xs = list(x) if isinstance(x, (list, tuple)) else [x]
    for t in xs:
        if t.dtype != np.float64:
            raise TensorError("grad_check: input of dtype %s, expected float64" % t.dtype)
    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    try:
        with Tape() as tape:
            out = f(x)
        if out.size != 1:
            raise TensorError("grad_check needs a scalar-valued function, got shape %s" % (out.shape,))
        tape.backward(out)
        analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in xs]
        coords = [(n, idx) for n, t in enumerate(xs) for idx in np.ndindex(t.shape)]
        if sample and sample < len(coords):
            pick = (rng or Rng(0)).permutation(len(coords))[:sample]
            coords = [coords[i] for i in sorted(pick)]
        worst, max_err = None, 0.0
        for n, idx in coords:
            t = xs[n]
            orig = t.data[idx]
            t.data[idx] = orig + eps
            fp = float(f(x).data)
            t.data[idx] = orig - eps
            fm = float(f(x).data)
            t.data[idx] = orig
            num = (fp - fm) / (2*eps)
            a = float(analytic[n][idx])
            err = abs(a - num) / max(abs(a), abs(num), 1e-12)
            if err >= max_err:
                max_err, worst = err, (n, idx, a, num)
    finally:
        for t, r in zip(xs, saved):
            t.requires_grad = r
            t.grad = None
    report = GradCheckReport(max_err, tolerance, len(coords), worst)
    if DEBUG&1: log("%s", report)
    return report



_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1<<64) - 1

def splitmix64(z):
    "SplitMix64 finalizer over an array of uint64 states"
    z = np.array(z, dtype=np.uint64)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


class Rng(object):
    """Counter-based generator: the i-th 64-bit output (i = 1, 2, ...) is
    splitmix64(seed + i * 0x9E3779B97F4A7C15 mod 2^64). Streams depend only on
    the seed and the sequence of calls, never on the platform."""
    def __init__(self, seed=0):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __str__(self):
        return "Rng(seed=%d, counter=%d)" % (self.seed, self.counter)

    def bits(self, n):
        "Returns the next n raw 64-bit outputs"
        c = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return splitmix64(np.uint64(self.seed) + c * np.uint64(_GOLDEN))

    def split(self, tag):
        "Derives an independent generator from this seed and a text tag"
        key = zlib.crc32(str(tag).encode('utf-8'))
        seed = splitmix64([(self.seed ^ (key * _GOLDEN)) & _MASK64])[0]
        return Rng(int(seed))

    def random(self, shape=None):
        "Uniform floats in [0, 1) with 53 random bits each"
        n = 1 if shape is None else int(np.prod(shape))
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1<<53))
        if shape is None:
            return float(u[0])
        return u.reshape(shape)

    def uniform(self, low, high, shape=None):
        u = self.random(shape)
        return low + (high - low) * u

    def integers(self, low, high, shape=None):
        "Integers in [low, high)"
        if high <= low:
            raise TensorError("Rng.integers: empty range [%d, %d)" % (low, high))
        u = self.random(shape)
        v = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        v = np.minimum(v, high - 1)
        if shape is None:
            return int(v)
        return v

    def normal(self, shape=None):
        "Standard normal deviates (Box-Muller)"
        n = 1 if shape is None else int(np.prod(shape))
        u1 = 1.0 - self.random(n)
        u2 = self.random(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        if shape is None:
            return float(z[0])
        return z.reshape(shape)

    def permutation(self, n):
        return np.argsort(self.random(n), kind='stable')


def init_uniform(shape, fan_in, rng):
    "Parameter tensor drawn uniformly in +-sqrt(1/fan_in)"
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)
