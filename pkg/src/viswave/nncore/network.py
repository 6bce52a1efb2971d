"""Network composition: named input branches, optional recurrent fusion, one
output head.

Feed-forward specs map {input_name: (B, ...)} arrays through per-branch layer
stacks, concatenate branch features along the last axis, and run the head.
Recurrent specs take (B, T, ...) sequences, apply each branch per time step
(shared weights), feed the concatenated per-step features through the Elman
cell, and run the head on the final hidden state.

Parameters live in one flat list ordered branch-by-branch, then cell, then
head; checkpoints rely on that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError
from . import layers as L


@dataclass(frozen=True)
class Branch:
    name: str
    input: str
    layers: tuple


@dataclass(frozen=True)
class NetworkSpec:
    branches: tuple[Branch, ...]
    cell: L.RNNCell | None
    head: tuple

    def all_layers(self):
        for branch in self.branches:
            yield from branch.layers
        yield from self.head


def init_params(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float64) -> list[np.ndarray]:
    params: list[np.ndarray] = []
    for branch in spec.branches:
        for layer in branch.layers:
            params.extend(layer.init(rng, dtype))
    if spec.cell is not None:
        params.extend(spec.cell.init(rng, dtype))
    for layer in spec.head:
        params.extend(layer.init(rng, dtype))
    return params


def param_count(spec: NetworkSpec) -> int:
    rng = np.random.default_rng(0)
    return sum(p.size for p in init_params(spec, rng))


_PARAM_ARITY = {"Dense": 2, "Conv2D": 2, "RNNCell": 3}


def _n_params(layer) -> int:
    return _PARAM_ARITY.get(type(layer).__name__, 0)


def _run_stack(stack, params, offset, x, tag):
    caches = []
    for i, layer in enumerate(stack):
        n = _n_params(layer)
        try:
            x, cache = layer.forward(params[offset : offset + n], x)
        except ShapeError as exc:
            raise ShapeError(f"{tag} layer {i} ({type(layer).__name__}): {exc}") from exc
        caches.append(cache)
        offset += n
    return x, caches, offset


def _stack_backward(stack, params, offset_end, caches, gy):
    grads: list[np.ndarray] = []
    offset = offset_end
    for layer, cache in zip(reversed(stack), reversed(caches)):
        n = _n_params(layer)
        offset -= n
        g, gy = layer.backward(params[offset : offset + n], cache, gy)
        grads = list(g) + grads
    return grads, gy


def forward(spec: NetworkSpec, params: list[np.ndarray], inputs: dict[str, np.ndarray]):
    """Returns (output, cache); raises ShapeError/NumericError per contract."""
    recurrent = spec.cell is not None
    offset = 0
    feats = []
    branch_caches = []
    shapes = {}
    for branch in spec.branches:
        if branch.input not in inputs:
            raise ShapeError(f"missing input '{branch.input}'")
        x = np.asarray(inputs[branch.input])
        shapes[branch.name] = x.shape
        if recurrent:
            b, t = x.shape[0], x.shape[1]
            x = x.reshape(b * t, *x.shape[2:])
            if x.ndim == 1:  # scalar-per-step sequence
                x = x[:, None]
        x, caches, offset = _run_stack(branch.layers, params, offset, x, f"branch '{branch.name}'")
        if recurrent:
            if x.ndim != 2:
                raise ShapeError(f"branch '{branch.name}' must emit vectors, got {x.shape}")
            x = x.reshape(b, t, -1)
        feats.append(x)
        branch_caches.append(caches)

    if len(feats) == 1:
        merged = feats[0]
    else:
        if any(f.ndim != feats[0].ndim for f in feats):
            raise ShapeError("branch outputs must have matching rank for concat")
        merged = np.concatenate(feats, axis=-1)

    rnn_caches = None
    if recurrent:
        cell = spec.cell
        n_cell = 3
        cell_params = params[offset : offset + n_cell]
        b, t = merged.shape[0], merged.shape[1]
        h = np.zeros((b, cell.n_hidden), dtype=merged.dtype)
        rnn_caches = []
        for step in range(t):
            h, cache = cell.step(cell_params, merged[:, step], h)
            rnn_caches.append(cache)
        head_in = h
        offset += n_cell
    else:
        head_in = merged

    y, head_caches, offset = _run_stack(spec.head, params, offset, head_in, "head")
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite network output")
    cache = {
        "branch_caches": branch_caches,
        "rnn_caches": rnn_caches,
        "head_caches": head_caches,
        "feat_widths": [f.shape[-1] for f in feats],
        "shapes": shapes,
        "merged_dtype": merged.dtype,
    }
    return y, cache


def backward(spec: NetworkSpec, params: list[np.ndarray], cache: dict, grad_out: np.ndarray):
    """Exact reverse-mode gradients; returns (param_grads, input_grads)."""
    recurrent = spec.cell is not None
    n_branch_params = [sum(_n_params(l) for l in b.layers) for b in spec.branches]
    offset_branches_end = sum(n_branch_params)
    offset_head_start = offset_branches_end + (3 if recurrent else 0)
    offset_end = offset_head_start + sum(_n_params(l) for l in spec.head)

    head_grads, g = _stack_backward(spec.head, params, offset_end, cache["head_caches"], grad_out)

    if recurrent:
        cell_params = params[offset_branches_end : offset_branches_end + 3]
        rnn_caches = cache["rnn_caches"]
        t = len(rnn_caches)
        gw = np.zeros_like(cell_params[0])
        gu = np.zeros_like(cell_params[1])
        gb = np.zeros_like(cell_params[2])
        gx_steps = [None] * t
        gh = g
        for step in range(t - 1, -1, -1):
            (gw_s, gu_s, gb_s), gx_s, gh = spec.cell.step_backward(
                cell_params, rnn_caches[step], gh
            )
            gw += gw_s
            gu += gu_s
            gb += gb_s
            gx_steps[step] = gx_s
        g = np.stack(gx_steps, axis=1)  # (B, T, merged_width)
        cell_grads = [gw, gu, gb]
    else:
        cell_grads = []

    # split merged gradient back into branch features
    widths = cache["feat_widths"]
    splits = np.cumsum(widths)[:-1]
    branch_feat_grads = np.split(g, splits, axis=-1) if len(widths) > 1 else [g]

    param_grads: list[np.ndarray] = []
    input_grads: dict[str, np.ndarray] = {}
    offset = 0
    for branch, caches, gfeat in zip(spec.branches, cache["branch_caches"], branch_feat_grads):
        n = sum(_n_params(l) for l in branch.layers)
        if recurrent:
            b, t = gfeat.shape[0], gfeat.shape[1]
            gfeat = gfeat.reshape(b * t, -1)  # branch outputs are vectors per step
        grads, gx = _stack_backward(branch.layers, params, offset + n, caches, gfeat)
        if recurrent:
            gx = gx.reshape(cache["shapes"][branch.name])
        input_grads[branch.input] = (
            input_grads[branch.input] + gx if branch.input in input_grads else gx
        )
        param_grads.extend(grads)
        offset += n
    param_grads.extend(cell_grads)
    param_grads.extend(head_grads)
    return param_grads, input_grads


def infer_output_shape(spec: NetworkSpec, input_shapes: dict[str, tuple]) -> tuple:
    """Shape walk without allocating parameters; raises ShapeError on mismatch."""
    recurrent = spec.cell is not None
    widths = []
    for branch in spec.branches:
        shape = input_shapes[branch.input]
        if recurrent:
            shape = (shape[0] * shape[1], *shape[2:])
            if len(shape) == 1:
                shape = (*shape, 1)
        for layer in branch.layers:
            shape = layer.out_shape(shape)
        widths.append(shape[-1] if len(shape) == 2 else shape)
    if recurrent or len(spec.branches) > 1:
        width = sum(w if isinstance(w, int) else int(np.prod(w[1:])) for w in widths)
        shape = (input_shapes[spec.branches[0].input][0], width)
    else:
        shape = widths[0] if not isinstance(widths[0], int) else (
            input_shapes[spec.branches[0].input][0],
            widths[0],
        )
    if recurrent:
        if width != spec.cell.n_in:
            raise ShapeError(f"cell expects {spec.cell.n_in} inputs, branches give {width}")
        shape = (shape[0], spec.cell.n_hidden)
    for layer in spec.head:
        shape = layer.out_shape(shape)
    return shape


def mse_loss(pred: np.ndarray, target: np.ndarray, weights: np.ndarray | None = None):
    """Mean squared error and its gradient w.r.t. pred."""
    diff = pred - target
    if weights is None:
        loss = float(np.mean(diff * diff))
        grad = (2.0 / diff.size) * diff
    else:
        wsum = float(weights.sum())
        loss = float(np.sum(weights * diff * diff) / wsum)
        grad = (2.0 / wsum) * weights * diff
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return loss, grad


# ------------------------------------------------------------- serialization

_LAYER_TYPES = {
    "Dense": L.Dense,
    "Conv2D": L.Conv2D,
    "MaxPool": L.MaxPool,
    "Relu": L.Relu,
    "Tanh": L.Tanh,
    "Flatten": L.Flatten,
    "Reshape": L.Reshape,
    "NearestUpsample": L.NearestUpsample,
}


def _layer_to_dict(layer) -> dict:
    d = {"type": type(layer).__name__}
    for name, value in vars(layer).items() if hasattr(layer, "__dict__") else []:
        d[name] = value
    # frozen dataclasses keep fields in __dataclass_fields__
    for name in getattr(layer, "__dataclass_fields__", {}):
        value = getattr(layer, name)
        d[name] = list(value) if isinstance(value, tuple) else value
    return d


def _layer_from_dict(d: dict):
    cls = _LAYER_TYPES[d["type"]]
    kwargs = {k: v for k, v in d.items() if k != "type"}
    if "shape" in kwargs:
        kwargs["shape"] = tuple(kwargs["shape"])
    return cls(**kwargs)


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "branches": [
            {"name": b.name, "input": b.input, "layers": [_layer_to_dict(l) for l in b.layers]}
            for b in spec.branches
        ],
        "cell": None
        if spec.cell is None
        else {"n_in": spec.cell.n_in, "n_hidden": spec.cell.n_hidden},
        "head": [_layer_to_dict(l) for l in spec.head],
    }


def spec_from_dict(d: dict) -> NetworkSpec:
    return NetworkSpec(
        branches=tuple(
            Branch(b["name"], b["input"], tuple(_layer_from_dict(l) for l in b["layers"]))
            for b in d["branches"]
        ),
        cell=None if d["cell"] is None else L.RNNCell(d["cell"]["n_in"], d["cell"]["n_hidden"]),
        head=tuple(_layer_from_dict(l) for l in d["head"]),
    )
