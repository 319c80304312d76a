"""Dense float64 tensors plus reverse-mode autodiff over explicit graphs.

The backward rule of every primitive is expressed with the same primitives,
so the gradient of a scalar with respect to an input is itself a new graph.
Differentiating through input-gradients (which the field training objective
needs, since the vector field consumes gradients of scalar networks) then
requires no extra machinery: build the gradient graph once and run the
ordinary backward pass over it.

Tensors are plain numpy float64 arrays in row-major order. This module owns
the graph semantics; numpy supplies the arithmetic kernels.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = [
    "GraphError",
    "Node",
    "ParameterStore",
    "Program",
    "add",
    "backward",
    "concat",
    "constant",
    "cos",
    "div",
    "evaluate",
    "forward",
    "gradients",
    "input_gradient",
    "input_node",
    "matmul",
    "mul",
    "parameter",
    "reshape",
    "scale",
    "sigmoid",
    "sin",
    "slice_",
    "softplus",
    "square",
    "sub",
    "sum_all",
    "tanh",
    "tanh_deriv",
    "topo_order",
    "transpose",
]


class GraphError(ValueError):
    """Malformed graph, incompatible shapes, or unbound inputs."""


def _arr(value):
    return np.asarray(value, dtype=np.float64)


class Node:
    """One vertex of a computation DAG; immutable once constructed."""

    __slots__ = ("op", "parents", "shape", "payload", "name")

    def __init__(self, op, parents=(), shape=(), payload=None, name=None):
        self.op = op
        self.parents = tuple(parents)
        self.shape = tuple(shape)
        self.payload = payload
        self.name = name

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Node({self.op}{tag}, shape={self.shape})"


def _label(node):
    return f"{node.op}" + (f" '{node.name}'" if node.name else "")


# ---------------------------------------------------------------------------
# graph constructors


def input_node(name, shape):
    return Node("input", (), tuple(int(s) for s in shape), name=name)


def parameter(store, name):
    if name not in store.values:
        raise GraphError(f"unknown parameter '{name}'")
    return Node("param", (), store.values[name].shape, payload=(store, name), name=name)


def constant(value, name=None):
    arr = _arr(value)
    return Node("const", (), arr.shape, payload=arr, name=name)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise GraphError(
            f"{op}: shape mismatch {a.shape} vs {b.shape} "
            f"({_label(a)}, {_label(b)})"
        )


def add(a, b):
    _same_shape("add", a, b)
    return Node("add", (a, b), a.shape)


def sub(a, b):
    _same_shape("sub", a, b)
    return Node("sub", (a, b), a.shape)


def _elementwise_pair(op, a, b):
    # same shapes, or one side a 0-d scalar
    if a.shape == b.shape:
        return a.shape
    if a.shape == ():
        return b.shape
    if b.shape == ():
        return a.shape
    raise GraphError(
        f"{op}: shape mismatch {a.shape} vs {b.shape} ({_label(a)}, {_label(b)})"
    )


def mul(a, b):
    return Node("mul", (a, b), _elementwise_pair("mul", a, b))


def div(a, b):
    return Node("div", (a, b), _elementwise_pair("div", a, b))


def matmul(a, b):
    if len(a.shape) != 2:
        raise GraphError(f"matmul: left operand must be 2-d, got {a.shape} ({_label(a)})")
    if len(b.shape) == 2:
        if a.shape[1] != b.shape[0]:
            raise GraphError(
                f"matmul: inner dimensions differ: {a.shape} @ {b.shape} ({_label(a)}, {_label(b)})"
            )
        out = (a.shape[0], b.shape[1])
    elif len(b.shape) == 1:
        if a.shape[1] != b.shape[0]:
            raise GraphError(
                f"matmul: inner dimensions differ: {a.shape} @ {b.shape} ({_label(a)}, {_label(b)})"
            )
        out = (a.shape[0],)
    else:
        raise GraphError(f"matmul: right operand must be 1-d or 2-d, got {b.shape} ({_label(b)})")
    return Node("matmul", (a, b), out)


def _unary(op, a):
    return Node(op, (a,), a.shape)


def tanh(a):
    return _unary("tanh", a)


def tanh_deriv(a):
    """1 - tanh(a)^2, kept as its own primitive so derivatives close."""
    return _unary("tanh_deriv", a)


def sin(a):
    return _unary("sin", a)


def cos(a):
    return _unary("cos", a)


def softplus(a):
    return _unary("softplus", a)


def sigmoid(a):
    return _unary("sigmoid", a)


def square(a):
    return _unary("square", a)


def scale(a, c):
    return Node("scale", (a,), a.shape, payload=float(c))


def sum_all(a):
    return Node("sum", (a,), ())


def concat(parts, axis=0):
    parts = tuple(parts)
    if not parts:
        raise GraphError("concat: no operands")
    ndim = len(parts[0].shape)
    if any(len(p.shape) != ndim for p in parts):
        raise GraphError("concat: operands must share rank")
    if not 0 <= axis < ndim:
        raise GraphError(f"concat: axis {axis} out of range for rank {ndim}")
    for dim in range(ndim):
        if dim != axis and any(p.shape[dim] != parts[0].shape[dim] for p in parts):
            raise GraphError(
                "concat: non-concatenated dimensions differ: "
                + ", ".join(str(p.shape) for p in parts)
            )
    shape = list(parts[0].shape)
    shape[axis] = sum(p.shape[axis] for p in parts)
    return Node("concat", parts, shape, payload=int(axis))


def slice_(a, axis, start, stop):
    ndim = len(a.shape)
    if not 0 <= axis < ndim:
        raise GraphError(f"slice: axis {axis} out of range for rank {ndim} ({_label(a)})")
    if not 0 <= start < stop <= a.shape[axis]:
        raise GraphError(
            f"slice: range [{start}, {stop}) invalid for dimension {a.shape[axis]} ({_label(a)})"
        )
    shape = list(a.shape)
    shape[axis] = stop - start
    return Node("slice", (a,), shape, payload=(int(axis), int(start), int(stop)))


def transpose(a):
    if len(a.shape) != 2:
        raise GraphError(f"transpose: operand must be 2-d, got {a.shape} ({_label(a)})")
    return Node("transpose", (a,), (a.shape[1], a.shape[0]))


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(a.shape, dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
        raise GraphError(f"reshape: cannot view {a.shape} as {shape} ({_label(a)})")
    return Node("reshape", (a,), shape, payload=shape)


# ---------------------------------------------------------------------------
# evaluation


def topo_order(outputs):
    """Parents-before-children ordering of every node reachable from outputs."""
    order = []
    seen = {}
    stack = [(node, False) for node in reversed(list(outputs))]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node in seen:
            continue
        seen[node] = True
        stack.append((node, True))
        for p in reversed(node.parents):
            if p not in seen:
                stack.append((p, False))
    return order


def _eval_node(node, vals, bindings):
    op = node.op
    ps = node.parents
    if op == "add":
        return vals[ps[0]] + vals[ps[1]]
    if op == "sub":
        return vals[ps[0]] - vals[ps[1]]
    if op == "mul":
        return vals[ps[0]] * vals[ps[1]]
    if op == "matmul":
        return vals[ps[0]] @ vals[ps[1]]
    if op == "tanh":
        return np.tanh(vals[ps[0]])
    if op == "tanh_deriv":
        t = np.tanh(vals[ps[0]])
        return 1.0 - t * t
    if op == "param":
        store, pname = node.payload
        return store.values[pname]
    if op == "const":
        return node.payload
    if op == "input":
        if bindings is None or node not in bindings:
            raise GraphError(f"unbound input '{node.name}'")
        return bindings[node]
    if op == "div":
        return vals[ps[0]] / vals[ps[1]]
    if op == "sum":
        return np.asarray(np.sum(vals[ps[0]]))
    if op == "square":
        a = vals[ps[0]]
        return a * a
    if op == "scale":
        return vals[ps[0]] * node.payload
    if op == "concat":
        return np.concatenate([vals[p] for p in ps], axis=node.payload)
    if op == "slice":
        axis, start, stop = node.payload
        a = vals[ps[0]]
        return a[start:stop] if axis == 0 else a[:, start:stop]
    if op == "sin":
        return np.sin(vals[ps[0]])
    if op == "cos":
        return np.cos(vals[ps[0]])
    if op == "softplus":
        return np.logaddexp(0.0, vals[ps[0]])
    if op == "sigmoid":
        a = vals[ps[0]]
        e = np.exp(-np.abs(a))
        return np.where(a >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    if op == "transpose":
        return vals[ps[0]].T
    if op == "reshape":
        return vals[ps[0]].reshape(node.payload)
    raise GraphError(f"unsupported op '{op}'")


def evaluate(outputs, bindings=None, order=None):
    """Evaluate a list of output nodes; returns their values in order."""
    if order is None:
        order = topo_order(outputs)
    vals = {}
    for node in order:
        vals[node] = _eval_node(node, vals, bindings)
    return [vals[o] for o in outputs]


def forward(output, bindings=None):
    """Value of a single output node under the given input bindings."""
    return evaluate([output], bindings)[0]


def find_nonfinite(outputs, bindings=None):
    """Name of the first node producing a non-finite value, or None."""
    order = topo_order(outputs)
    vals = {}
    for node in order:
        vals[node] = _eval_node(node, vals, bindings)
        if not np.all(np.isfinite(vals[node])):
            return _label(node)
    return None


class Program:
    """Named outputs with a precomputed evaluation order and named inputs."""

    def __init__(self, outputs, inputs=None):
        self.outputs = dict(outputs)
        self.inputs = dict(inputs or {})
        self._names = list(self.outputs)
        self._nodes = [self.outputs[k] for k in self._names]
        self._order = topo_order(self._nodes)

    def run(self, **bindings):
        env = {}
        for name, value in bindings.items():
            try:
                node = self.inputs[name]
            except KeyError:
                raise GraphError(f"program has no input '{name}'") from None
            arr = _arr(value)
            if arr.shape != node.shape:
                raise GraphError(
                    f"input '{name}': expected shape {node.shape}, got {arr.shape}"
                )
            env[node] = arr
        vals = evaluate(self._nodes, env, order=self._order)
        return dict(zip(self._names, vals))


# ---------------------------------------------------------------------------
# symbolic backward rules


def _reduce_to(g, target_shape):
    # adjoint of a scalar operand inside a broadcasting mul/div
    if g.shape == target_shape:
        return g
    if target_shape == ():
        return sum_all(g)
    raise GraphError(f"cannot reduce adjoint {g.shape} to {target_shape}")


def _ones(shape):
    return constant(np.ones(shape))


def _vjp(node, g):
    """Adjoint contributions [(parent, node)] for one primitive."""
    op = node.op
    ps = node.parents
    if op in ("input", "param", "const"):
        return []
    if op == "add":
        return [(ps[0], g), (ps[1], g)]
    if op == "sub":
        return [(ps[0], g), (ps[1], scale(g, -1.0))]
    if op == "mul":
        a, b = ps
        return [
            (a, _reduce_to(mul(g, b), a.shape)),
            (b, _reduce_to(mul(g, a), b.shape)),
        ]
    if op == "div":
        a, b = ps
        ga = _reduce_to(div(g, b), a.shape)
        gb = _reduce_to(scale(mul(g, div(node, b)), -1.0), b.shape)
        return [(a, ga), (b, gb)]
    if op == "matmul":
        a, b = ps
        if len(b.shape) == 2:
            return [
                (a, matmul(g, transpose(b))),
                (b, matmul(transpose(a), g)),
            ]
        m, n = a.shape
        return [
            (a, matmul(reshape(g, (m, 1)), reshape(b, (1, n)))),
            (b, matmul(transpose(a), g)),
        ]
    if op == "tanh":
        return [(ps[0], mul(g, tanh_deriv(ps[0])))]
    if op == "tanh_deriv":
        inner = mul(tanh(ps[0]), node)
        return [(ps[0], scale(mul(g, inner), -2.0))]
    if op == "sin":
        return [(ps[0], mul(g, cos(ps[0])))]
    if op == "cos":
        return [(ps[0], scale(mul(g, sin(ps[0])), -1.0))]
    if op == "softplus":
        return [(ps[0], mul(g, sigmoid(ps[0])))]
    if op == "sigmoid":
        return [(ps[0], mul(g, mul(node, sub(_ones(node.shape), node))))]
    if op == "square":
        return [(ps[0], scale(mul(g, ps[0]), 2.0))]
    if op == "scale":
        return [(ps[0], scale(g, node.payload))]
    if op == "sum":
        return [(ps[0], mul(_ones(ps[0].shape), g))]
    if op == "concat":
        axis = node.payload
        out = []
        offset = 0
        for p in ps:
            width = p.shape[axis]
            out.append((p, slice_(g, axis, offset, offset + width)))
            offset += width
        return out
    if op == "slice":
        axis, start, stop = ps[0].shape, node.payload[1], node.payload[2]
        axis = node.payload[0]
        parent = ps[0]
        pieces = []
        if start > 0:
            before = list(parent.shape)
            before[axis] = start
            pieces.append(constant(np.zeros(before)))
        pieces.append(g)
        if stop < parent.shape[axis]:
            after = list(parent.shape)
            after[axis] = parent.shape[axis] - stop
            pieces.append(constant(np.zeros(after)))
        out = pieces[0] if len(pieces) == 1 else concat(pieces, axis=axis)
        return [(parent, out)]
    if op == "transpose":
        return [(ps[0], transpose(g))]
    if op == "reshape":
        return [(ps[0], reshape(g, ps[0].shape))]
    raise GraphError(f"no backward rule for op '{op}'")


def _ensure_scalar(output, what):
    if output.shape == ():
        return output
    if int(np.prod(output.shape, dtype=np.int64)) == 1:
        return sum_all(output)
    raise GraphError(f"{what} requires a scalar output, got shape {output.shape}")


def gradients(output, wrt):
    """Gradient graphs of a scalar output with respect to the given nodes.

    The returned nodes reference the original parameter and input nodes, so
    they can be evaluated under new bindings or differentiated again.
    """
    root = _ensure_scalar(output, "gradients")
    adjoint = {root: constant(np.asarray(1.0))}
    for node in reversed(topo_order([root])):
        g = adjoint.get(node)
        if g is None:
            continue
        for parent, contrib in _vjp(node, g):
            prev = adjoint.get(parent)
            adjoint[parent] = contrib if prev is None else add(prev, contrib)
    return [
        adjoint[w] if w in adjoint else constant(np.zeros(w.shape))
        for w in wrt
    ]


def input_gradient(output, wrt):
    """New graph computing d(scalar output)/d(wrt input node)."""
    return gradients(output, [wrt])[0]


def backward(output, seed=1.0, bindings=None):
    """Accumulate d(output)/d(param) into every parameter's gradient slot.

    Returns the accumulated contribution per parameter name. Multiple calls
    keep accumulating; clear slots with ParameterStore.zero_grads().
    """
    root = _ensure_scalar(output, "backward")
    order = topo_order([root])
    params = [n for n in order if n.op == "param"]
    grads = gradients(root, params)
    values = evaluate(grads, bindings)
    out = {}
    for node, val in zip(params, values):
        store, name = node.payload
        contrib = float(seed) * val
        store.grads[name] = store.grads[name] + contrib
        out[name] = out.get(name, 0.0) + contrib
    return out


# ---------------------------------------------------------------------------
# parameters


class ParameterStore:
    """Named float64 parameter arrays with matching gradient slots."""

    def __init__(self):
        self.values = {}
        self.grads = {}

    def add(self, name, value):
        if name in self.values:
            raise GraphError(f"duplicate parameter '{name}'")
        arr = _arr(value).copy()
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def zero_grads(self):
        for name in self.grads:
            self.grads[name] = np.zeros_like(self.values[name])

    @property
    def total_count(self):
        return int(sum(v.size for v in self.values.values()))

    def copy(self):
        other = ParameterStore()
        for name, value in self.values.items():
            other.add(name, value)
        return other

    def state_dict(self):
        return {
            name: {"shape": list(value.shape), "data": [float(x) for x in value.ravel()]}
            for name, value in self.values.items()
        }

    @classmethod
    def from_state_dict(cls, state):
        store = cls()
        for name, entry in state.items():
            arr = _arr(entry["data"]).reshape(entry["shape"])
            store.add(name, arr)
        return store

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.state_dict(), fh, indent=1)

    @classmethod
    def load_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_state_dict(json.load(fh))
