"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` records every operation applied while it is active; ``backward``
walks the records in reverse and applies each op's gradient rule.  Gradient
rules are themselves built from the recorded primitives, so differentiating
through a gradient (needed for the discriminator's gradient penalty) falls
out of the same machinery instead of requiring a second engine.

Convolution is expressed as patch extraction plus a batched matrix product,
which keeps each primitive's gradient rule a couple of lines.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, NumericError, ShapeError, ValidationError

_tls = threading.local()


def _stack():
    if not hasattr(_tls, "tapes"):
        _tls.tapes = []
    return _tls.tapes


def _active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class _push_tape:
    """Force a specific tape (or None, suppressing recording) while active."""

    def __init__(self, tape):
        self._tape = tape

    def __enter__(self):
        _stack().append(self._tape)

    def __exit__(self, *exc):
        _stack().pop()


class Tensor:
    """n-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    """One operation record: which op ran, on which earlier nodes."""

    __slots__ = ("idx", "op", "input_ids", "tensor", "backward_fn", "recompute_fn")

    def __init__(self, idx, op, input_ids, tensor, backward_fn, recompute_fn):
        self.idx = idx
        self.op = op
        self.input_ids = input_ids
        self.tensor = tensor
        self.backward_fn = backward_fn
        self.recompute_fn = recompute_fn


class Tape:
    """Append-only, creation-ordered (hence topological) operation log.

    Single-writer: one tape must not be fed from multiple threads.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._node_by_tensor: dict[int, Node] = {}

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()

    def node_of(self, t: Tensor, create: bool = False):
        node = self._node_by_tensor.get(id(t))
        if node is None and create:
            node = Node(len(self.nodes), "leaf", (), t, None, None)
            self.nodes.append(node)
            self._node_by_tensor[id(t)] = node
        return node

    def record(self, op, inputs, out, backward_fn, recompute_fn):
        input_ids = tuple(self.node_of(t, create=True).idx for t in inputs)
        node = Node(len(self.nodes), op, input_ids, out, backward_fn, recompute_fn)
        self.nodes.append(node)
        self._node_by_tensor[id(out)] = node
        return node

    def replay(self) -> bool:
        """Re-run every recorded op from leaf values; True if all outputs
        reproduce bitwise."""
        values: dict[int, np.ndarray] = {}
        ok = True
        for node in self.nodes:
            if node.backward_fn is None:
                values[node.idx] = node.tensor.data
                continue
            out = node.recompute_fn([values[i] for i in node.input_ids])
            if out.shape != node.tensor.data.shape or not (out == node.tensor.data).all():
                ok = False
            values[node.idx] = out
        return ok


def _record(op, inputs, out_data, backward_fn, recompute_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        tape.record(op, inputs, out, backward_fn, recompute_fn)
    return out


# ---------------------------------------------------------------------------
# primitives


def _scalar_like(t: Tensor) -> bool:
    return t.data.size == 1


def _match_binary(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and not (_scalar_like(a) or _scalar_like(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not identical "
                         "and neither operand is a scalar")


def _reduce_to(g: Tensor, shape) -> Tensor:
    """Collapse a gradient onto a scalar operand's shape."""
    if g.shape == tuple(shape):
        return g
    return reshape(sum_axes(g), shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _match_binary(a, b, "add")

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record("add", (a, b), a.data + b.data, backward,
                   lambda ins: ins[0] + ins[1])


def sub(a, b) -> Tensor:
    return add(a, scale(as_tensor(b), -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _match_binary(a, b, "mul")

    def backward(g):
        return _reduce_to(mul(g, b), a.shape), _reduce_to(mul(g, a), b.shape)

    return _record("mul", (a, b), a.data * b.data, backward,
                   lambda ins: ins[0] * ins[1])


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        return (scale(g, c),)

    return _record("scale", (a,), a.data * c, backward, lambda ins: ins[0] * c)


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    mask = np.where(a.data >= 0.0, 1.0, alpha)

    def backward(g):
        return (mul(g, Tensor(mask)),)

    return _record("leaky_relu", (a,), a.data * mask, backward,
                   lambda ins: ins[0] * np.where(ins[0] >= 0.0, 1.0, alpha))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    saved = {}

    def backward(g):
        y = saved["out"]  # reusing the output keeps second derivatives exact
        return (mul(g, mul(y, sub(1.0, y))),)

    out = _record("sigmoid", (a,), _sigmoid(a.data), backward,
                  lambda ins: _sigmoid(ins[0]))
    saved["out"] = out
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    # log(1 + e^x) computed as max(x, 0) + log1p(e^{-|x|}) to avoid overflow
    out_data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def backward(g):
        return (mul(g, sigmoid(a)),)

    return _record(
        "softplus", (a,), out_data, backward,
        lambda ins: np.maximum(ins[0], 0.0) + np.log1p(np.exp(-np.abs(ins[0]))))


def rsqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericError("rsqrt requires strictly positive values")
    saved = {}

    def backward(g):
        y = saved["out"]
        return (scale(mul(g, mul(mul(y, y), y)), -0.5),)

    out = _record("rsqrt", (a,), 1.0 / np.sqrt(a.data), backward,
                  lambda ins: 1.0 / np.sqrt(ins[0]))
    saved["out"] = out
    return out


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (scale(mul(g, a), 2.0),)

    return _record("square", (a,), a.data * a.data, backward,
                   lambda ins: ins[0] * ins[0])


def sum_axes(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))
    else:
        axes = tuple(sorted(ax % max(a.data.ndim, 1) for ax in axes))
    out_data = a.data.sum(axis=axes if axes else None, keepdims=keepdims)

    def backward(g):
        if keepdims:
            g = reshape(g, tuple(d for i, d in enumerate(a.shape) if i not in axes))
        return (expand(g, a.shape, axes),)

    return _record("sum", (a,), np.asarray(out_data), backward,
                   lambda ins: np.asarray(ins[0].sum(axis=axes if axes else None,
                                                     keepdims=keepdims)))


def expand(a, target_shape, axes) -> Tensor:
    """Tile ``a`` along the listed target axes (adjoint of sum_axes)."""
    a = as_tensor(a)
    target_shape = tuple(target_shape)
    axes = tuple(sorted(ax % len(target_shape) for ax in axes))
    kept = tuple(d for i, d in enumerate(target_shape) if i not in axes)
    if a.shape != kept:
        raise ShapeError(f"expand: shape {a.shape} does not match target "
                         f"{target_shape} minus axes {axes}")
    with_ones = list(target_shape)
    for ax in axes:
        with_ones[ax] = 1

    def fwd(arr):
        return np.broadcast_to(arr.reshape(with_ones), target_shape).copy()

    def backward(g):
        return (sum_axes(g, axes),)

    return _record("expand", (a,), fwd(a.data), backward, lambda ins: fwd(ins[0]))


def mean(a) -> Tensor:
    a = as_tensor(a)
    return scale(sum_axes(a), 1.0 / a.data.size)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def backward(g):
        return (reshape(g, old),)

    return _record("reshape", (a,), a.data.reshape(shape), backward,
                   lambda ins: ins[0].reshape(shape))


def transpose(a, perm) -> Tensor:
    a = as_tensor(a)
    perm = tuple(perm)
    inv = tuple(np.argsort(perm))

    # views, not copies: downstream numpy ops accept any layout
    def backward(g):
        return (transpose(g, inv),)

    return _record("transpose", (a,), a.data.transpose(perm), backward,
                   lambda ins: ins[0].transpose(perm))


def _t_last2(t: Tensor) -> Tensor:
    perm = list(range(t.data.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return transpose(t, perm)


def _unbroadcast_batched(g: Tensor, shape) -> Tensor:
    """Sum away batch dims a 2-D matmul operand acquired through broadcast."""
    extra = g.data.ndim - len(shape)
    if extra == 0:
        return g
    return sum_axes(g, tuple(range(extra)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    if a.data.ndim > 2 and b.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul: batch dimensions must match exactly")

    def backward(g):
        ga = _unbroadcast_batched(matmul(g, _t_last2(b)), a.shape)
        gb = _unbroadcast_batched(matmul(_t_last2(a), g), b.shape)
        return ga, gb

    return _record("matmul", (a, b), np.matmul(a.data, b.data), backward,
                   lambda ins: np.matmul(ins[0], ins[1]))


def _conv_out_dim(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def extract_patches(x, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    """[N,C,H,W] -> [N,OH,OW,C,kh,kw] sliding windows with zero padding.

    Channel-last window layout so the im2col reshape needs no transpose.
    """
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("extract_patches expects a 4-D input")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    n, c, h, w = x.shape
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError("kernel larger than padded input")

    def fwd(arr):
        nhwc = arr.transpose(0, 2, 3, 1)
        padded = np.pad(nhwc, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
        # window shape [N, OH', OW', C, kh, kw]
        return np.ascontiguousarray(win[:, ::stride, ::stride])

    def backward(g):
        return (fold_patches(g, x.shape, kh, kw, stride, pad),)

    return _record("extract_patches", (x,), fwd(x.data), backward,
                   lambda ins: fwd(ins[0]))


def fold_patches(p, x_shape, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Scatter-add [N,OH,OW,C,kh,kw] patches back onto an [N,C,H,W] canvas."""
    p = as_tensor(p)
    n, c, h, w = x_shape
    oh, ow = _conv_out_dim(h, kh, stride, pad), _conv_out_dim(w, kw, stride, pad)
    if p.shape != (n, oh, ow, c, kh, kw):
        raise ShapeError(f"fold_patches: got {p.shape}, expected {(n, oh, ow, c, kh, kw)}")

    def fwd(arr):
        canvas = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                canvas[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += arr[..., i, j]
        if pad:
            canvas = canvas[:, pad:pad + h, pad:pad + w, :]
        return np.ascontiguousarray(canvas.transpose(0, 3, 1, 2))

    def backward(g):
        return (extract_patches(g, kh, kw, stride, pad),)

    return _record("fold_patches", (p,), fwd(p.data), backward, lambda ins: fwd(ins[0]))


def _parse_einsum2(subscripts: str):
    lhs, out = subscripts.replace(" ", "").split("->")
    a_s, b_s = lhs.split(",")
    for labels in (a_s, b_s, out):
        if len(set(labels)) != len(labels):
            raise ValidationError(f"einsum2: repeated index within one term: {subscripts}")
    if not set(out) <= set(a_s) | set(b_s):
        raise ValidationError(f"einsum2: output index absent from inputs: {subscripts}")
    if not set(a_s) <= set(out) | set(b_s) or not set(b_s) <= set(out) | set(a_s):
        raise ValidationError(
            f"einsum2: an index may not appear in a single input only: {subscripts}")
    return a_s, b_s, out


def einsum2(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum whose gradients are einsums of the same family."""
    a, b = as_tensor(a), as_tensor(b)
    a_s, b_s, out_s = _parse_einsum2(subscripts)

    def fwd(x, y):
        try:
            return np.einsum(subscripts, x, y, optimize=True)
        except ValueError as exc:
            raise ShapeError(f"einsum2 {subscripts}: {exc}") from None

    def backward(g):
        ga = einsum2(f"{out_s},{b_s}->{a_s}", g, b)
        gb = einsum2(f"{out_s},{a_s}->{b_s}", g, a)
        return ga, gb

    return _record(f"einsum2[{subscripts}]", (a, b), fwd(a.data, b.data), backward,
                   lambda ins: fwd(ins[0], ins[1]))


def avgpool2x(x) -> Tensor:
    """Area-average 2x downsampling of an [N,C,H,W] tensor."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError("avgpool2x requires even spatial dimensions")

    def fwd(arr):
        return arr.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (scale(upsample2x(g), 0.25),)

    return _record("avgpool2x", (x,), fwd(x.data), backward, lambda ins: fwd(ins[0]))


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x upsampling of an [N,C,H,W] tensor."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("upsample2x expects a 4-D input")

    def fwd(arr):
        return np.repeat(np.repeat(arr, 2, axis=2), 2, axis=3)

    def backward(g):
        return (scale(avgpool2x(g), 4.0),)

    return _record("upsample2x", (x,), fwd(x.data), backward, lambda ins: fwd(ins[0]))


def conv2d(x, kernel, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of [N,C,H,W] with [F,C,kh,kw], zero padded."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ck}")
    oh, ow = _conv_out_dim(h, kh, stride, pad), _conv_out_dim(w, kw, stride, pad)
    patches = extract_patches(x, kh, kw, stride, pad)           # [N,OH,OW,C,kh,kw]
    pm = reshape(patches, (n, oh * ow, c * kh * kw))
    km = transpose(reshape(kernel, (f, c * kh * kw)), (1, 0))   # [C*kh*kw, F]
    out = matmul(pm, km)                                        # [N, OH*OW, F]
    return transpose(reshape(out, (n, oh, ow, f)), (0, 3, 1, 2))


def conv2d_per_sample(x, kernels, stride: int = 1, pad: int = 0) -> Tensor:
    """Convolution with a distinct kernel stack per batch sample.

    kernels: [N,F,C,kh,kw]; used by the style-modulated generator blocks.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    n, c, h, w = x.shape
    nk, f, ck, kh, kw = kernels.shape
    if nk != n or ck != c:
        raise ShapeError(f"conv2d_per_sample: input {x.shape} vs kernels {kernels.shape}")
    oh, ow = _conv_out_dim(h, kh, stride, pad), _conv_out_dim(w, kw, stride, pad)
    patches = extract_patches(x, kh, kw, stride, pad)
    pm = reshape(patches, (n, oh * ow, c * kh * kw))
    km = transpose(reshape(kernels, (n, f, c * kh * kw)), (0, 2, 1))  # [N,C*kh*kw,F]
    out = matmul(pm, km)
    return transpose(reshape(out, (n, oh, ow, f)), (0, 3, 1, 2))


def scale_axis(x, v, axis: int) -> Tensor:
    """Multiply ``x`` by vector ``v`` laid out along ``axis``."""
    x, v = as_tensor(x), as_tensor(v)
    axis = axis % x.data.ndim
    if v.shape != (x.shape[axis],):
        raise ShapeError(f"scale_axis: vector {v.shape} vs axis length {x.shape[axis]}")
    other = tuple(i for i in range(x.data.ndim) if i != axis)
    return mul(x, expand(v, x.shape, other))


def bias_axis(x, v, axis: int) -> Tensor:
    """Add vector ``v`` along ``axis`` of ``x``."""
    x, v = as_tensor(x), as_tensor(v)
    axis = axis % x.data.ndim
    if v.shape != (x.shape[axis],):
        raise ShapeError(f"bias_axis: vector {v.shape} vs axis length {x.shape[axis]}")
    other = tuple(i for i in range(x.data.ndim) if i != axis)
    return add(x, expand(v, x.shape, other))


# ---------------------------------------------------------------------------
# elementwise dispatch (the stable names other modules and the CLI rely on)

_ELEMENTWISE = {
    "add": lambda *ins, **kw: add(*ins),
    "sub": lambda *ins, **kw: sub(*ins),
    "mul": lambda *ins, **kw: mul(*ins),
    "scale": lambda t, c, **kw: scale(t, c),
    "leaky_relu": lambda t, **kw: leaky_relu(t, kw.get("alpha", 0.2)),
    "softplus": lambda t, **kw: softplus(t),
    "sum": lambda t, **kw: sum_axes(t),
    "mean": lambda t, **kw: mean(t),
    "rsqrt": lambda t, **kw: rsqrt(t),
    "square": lambda t, **kw: square(t),
}


def elementwise(op_name: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = _ELEMENTWISE[op_name]
    except KeyError:
        raise ValidationError(f"unknown elementwise op: {op_name!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward engine


def _needs_map(tape: Tape, upto: int, wanted: set[int]) -> list[bool]:
    needs = [False] * (upto + 1)
    for idx in wanted:
        if idx <= upto:
            needs[idx] = True
    for node in tape.nodes[:upto + 1]:
        if node.backward_fn is not None and any(needs[i] for i in node.input_ids):
            needs[node.idx] = True
    return needs


def _walk(tape: Tape, loss: Tensor, wanted: set[int], create_graph: bool):
    loss_node = tape.node_of(loss)
    if loss_node is None:
        raise ContractError("loss tensor was not produced on this tape")
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss")
    needs = _needs_map(tape, loss_node.idx, wanted)
    grads: dict[int, Tensor] = {loss_node.idx: Tensor(np.ones_like(loss.data))}
    span = tape.nodes[:loss_node.idx + 1]
    with _push_tape(tape if create_graph else None):
        for node in reversed(span):
            g = grads.get(node.idx)
            if g is None or node.backward_fn is None:
                continue
            if not any(needs[i] for i in node.input_ids):
                continue
            input_grads = node.backward_fn(g)
            for in_idx, ig in zip(node.input_ids, input_grads):
                if ig is None or not needs[in_idx]:
                    continue
                prev = grads.get(in_idx)
                grads[in_idx] = ig if prev is None else add(prev, ig)
    return grads


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, Tensor]:
    """Gradients of a scalar loss w.r.t. every requires_grad leaf on the tape.

    Leaves the loss does not reach get zero gradients.  Gradients are also
    attached to each leaf's ``.grad``.
    """
    watched = [n for n in tape.nodes
               if n.backward_fn is None and n.tensor.requires_grad]
    wanted = {n.idx for n in watched}
    grads = _walk(tape, loss, wanted, create_graph=False)
    out: dict[Tensor, Tensor] = {}
    for node in watched:
        g = grads.get(node.idx)
        if g is None:
            g = Tensor(np.zeros_like(node.tensor.data))
        node.tensor.grad = g
        out[node.tensor] = g
    return out


def grad(tape: Tape, output: Tensor, inputs, create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar output w.r.t. an explicit list of tensors.

    With ``create_graph=True`` the returned tensors are recorded on the same
    tape, so they can be differentiated again (gradient penalties).
    """
    nodes = [tape.node_of(t) for t in inputs]
    wanted = {n.idx for n in nodes if n is not None}
    grads = _walk(tape, output, wanted, create_graph)
    out = []
    for t, n in zip(inputs, nodes):
        g = grads.get(n.idx) if n is not None else None
        out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out


def grad_check(f, inputs, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the input tensors to a scalar Tensor and must be smooth at the
    given point (callers keep leaky_relu inputs away from the kink).
    """
    inputs = [as_tensor(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True
    with Tape() as tape:
        out = f(*inputs)
    if out.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    analytic = grad(tape, out, inputs)
    worst = 0.0
    for t, g in zip(inputs, analytic):
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        gflat = g.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(*inputs).item()
            flat[i] = orig - eps
            lo = f(*inputs).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError("non-finite value during finite differencing")
            fd = (hi - lo) / (2.0 * eps)
            rel = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]))
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# registry of differentiable ops, used by the gradient test suite


class OpCase:
    def __init__(self, name, fn, sampler):
        self.name = name
        self.fn = fn          # (*tensors) -> Tensor (any shape)
        self.sampler = sampler  # rng -> list[np.ndarray], smooth inputs

    def loss(self, *tensors) -> Tensor:
        out = self.fn(*tensors)
        # square before reducing so every output coordinate influences the loss
        return sum_axes(square(out))


def _away_from_zero(arr, margin=0.25):
    return np.where(np.abs(arr) < margin, arr + np.sign(arr + 0.5) * margin, arr)


def op_registry() -> list[OpCase]:
    def pair(rng):
        return [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))]

    def with_scalar(rng):
        return [rng.standard_normal((3, 4)), rng.standard_normal(())]

    def single(rng):
        return [rng.standard_normal((3, 4))]

    def positive(rng):
        return [rng.random((3, 4)) + 0.5]

    def offset(rng):
        return [_away_from_zero(rng.standard_normal((3, 4)))]

    return [
        OpCase("add", add, pair),
        OpCase("add_scalar", add, with_scalar),
        OpCase("sub", sub, pair),
        OpCase("mul", mul, pair),
        OpCase("mul_scalar", mul, with_scalar),
        OpCase("scale", lambda t: scale(t, -1.7), single),
        OpCase("leaky_relu", lambda t: leaky_relu(t, 0.2), offset),
        OpCase("sigmoid", sigmoid, single),
        OpCase("softplus", softplus, single),
        OpCase("rsqrt", rsqrt, positive),
        OpCase("square", square, single),
        OpCase("sum_all", sum_axes, single),
        OpCase("sum_axis", lambda t: sum_axes(t, (1,)), single),
        OpCase("mean", mean, single),
        OpCase("expand", lambda t: expand(t, (2, 3, 4), (0,)), single),
        OpCase("reshape", lambda t: reshape(t, (2, 6)), single),
        OpCase("transpose", lambda t: transpose(t, (1, 0)), single),
        OpCase("matmul", matmul,
               lambda rng: [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))]),
        OpCase("matmul_batched", matmul,
               lambda rng: [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 2))]),
        OpCase("matmul_broadcast", matmul,
               lambda rng: [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 2))]),
        OpCase("einsum2", lambda a, b: einsum2("fcij,c->fcij", a, b),
               lambda rng: [rng.standard_normal((2, 3, 2, 2)), rng.standard_normal(3)]),
        OpCase("extract_patches", lambda t: extract_patches(t, 3, 3, 1, 1),
               lambda rng: [rng.standard_normal((1, 2, 4, 4))]),
        OpCase("fold_patches", lambda t: fold_patches(t, (1, 2, 4, 4), 3, 3, 1, 1),
               lambda rng: [rng.standard_normal((1, 4, 4, 2, 3, 3))]),
        OpCase("avgpool2x", avgpool2x, lambda rng: [rng.standard_normal((1, 2, 4, 4))]),
        OpCase("upsample2x", upsample2x, lambda rng: [rng.standard_normal((1, 2, 3, 3))]),
        OpCase("conv2d", lambda x, k: conv2d(x, k, 1, 1),
               lambda rng: [rng.standard_normal((1, 2, 5, 5)),
                            rng.standard_normal((3, 2, 3, 3))]),
        OpCase("conv2d_stride2", lambda x, k: conv2d(x, k, 2, 1),
               lambda rng: [rng.standard_normal((1, 2, 6, 6)),
                            rng.standard_normal((3, 2, 3, 3))]),
        OpCase("conv2d_per_sample", lambda x, k: conv2d_per_sample(x, k, 1, 1),
               lambda rng: [rng.standard_normal((2, 2, 4, 4)),
                            rng.standard_normal((2, 3, 2, 3, 3))]),
        OpCase("scale_axis", lambda x, v: scale_axis(x, v, 1),
               lambda rng: [rng.standard_normal((2, 3, 2, 2)), rng.standard_normal(3)]),
        OpCase("bias_axis", lambda x, v: bias_axis(x, v, 1),
               lambda rng: [rng.standard_normal((2, 3, 2, 2)), rng.standard_normal(3)]),
    ]
