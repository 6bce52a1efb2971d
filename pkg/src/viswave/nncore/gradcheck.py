"""Finite-difference oracle for every layer type.

Builds small random instances per layer, computes the scalar loss
0.5*||y - y*||^2, and compares analytic gradients (parameters and inputs)
against central differences in float64. The relative-error denominator is
floored at 1e-3 to keep near-zero gradients from inflating the ratio beyond
the oracle's own rounding noise.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .network import Branch, NetworkSpec, backward, forward, init_params

FD_STEP = 1e-5
REL_FLOOR = 1e-3


def _loss_and_grad(spec, params, inputs, target):
    y, cache = forward(spec, params, inputs)
    diff = y - target
    loss = 0.5 * float(np.sum(diff * diff))
    return loss, diff, cache


def _numeric_max_rel_err(spec, params, inputs, target) -> float:
    loss, gy, cache = _loss_and_grad(spec, params, inputs, target)
    param_grads, input_grads = backward(spec, params, cache, gy)

    def loss_only():
        return _loss_and_grad(spec, params, inputs, target)[0]

    worst = 0.0

    def check(array, analytic):
        nonlocal worst
        flat = array.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + FD_STEP
            up = loss_only()
            flat[i] = keep - FD_STEP
            down = loss_only()
            flat[i] = keep
            fd = (up - down) / (2.0 * FD_STEP)
            denom = max(abs(fd), abs(aflat[i]), REL_FLOOR)
            worst = max(worst, abs(fd - aflat[i]) / denom)

    for p, g in zip(params, param_grads):
        check(p, g)
    for name, g in input_grads.items():
        check(inputs[name], g)
    return worst


def _single(layer, in_shape, rng):
    spec = NetworkSpec(branches=(Branch("b", "x", (layer,)),), cell=None, head=())
    params = init_params(spec, rng, np.float64)
    x = rng.normal(0.0, 1.0, size=in_shape)
    out_shape = layer.out_shape(in_shape)
    target = rng.normal(0.0, 1.0, size=out_shape)
    return spec, params, {"x": x}, target


def layer_cases(rng: np.random.Generator):
    """One random small instance per layer type; yields (name, spec, params, inputs, target)."""
    b = int(rng.integers(1, 3))

    spec, params, inputs, target = _single(Dense := L.Dense(4, 3), (b, 4), rng)
    yield "Dense", spec, params, inputs, target

    k = int(rng.integers(2, 4))
    stride = int(rng.integers(1, 3))
    h = k + stride * int(rng.integers(1, 3))
    w = k + stride * int(rng.integers(1, 3))
    conv = L.Conv2D(2, 3, k, stride)
    spec, params, inputs, target = _single(conv, (b, 2, h, w), rng)
    yield "Conv2D", spec, params, inputs, target

    k = int(rng.integers(2, 4))
    pool = L.MaxPool(k)
    spec, params, inputs, target = _single(pool, (b, 2, k * 2, k * 2 + 1), rng)
    yield "MaxPool", spec, params, inputs, target

    spec, params, inputs, target = _single(L.Relu(), (b, 5), rng)
    yield "Relu", spec, params, inputs, target

    spec, params, inputs, target = _single(L.Tanh(), (b, 5), rng)
    yield "Tanh", spec, params, inputs, target

    spec, params, inputs, target = _single(L.Flatten(), (b, 2, 3, 2), rng)
    yield "Flatten", spec, params, inputs, target

    spec, params, inputs, target = _single(L.Reshape((2, 3, 2)), (b, 12), rng)
    yield "Reshape", spec, params, inputs, target

    spec, params, inputs, target = _single(L.NearestUpsample(2), (b, 2, 2, 3), rng)
    yield "NearestUpsample", spec, params, inputs, target

    # recurrent spec exercises RNNCell plus time-distributed branch application
    t = int(rng.integers(2, 5))
    spec = NetworkSpec(
        branches=(Branch("b", "x", (L.Dense(3, 4), L.Tanh())),),
        cell=L.RNNCell(4, 5),
        head=(L.Dense(5, 2),),
    )
    params = init_params(spec, rng, np.float64)
    inputs = {"x": rng.normal(0.0, 1.0, size=(b, t, 3))}
    target = rng.normal(0.0, 1.0, size=(b, 2))
    yield "RNNCell", spec, params, inputs, target

    # two-branch concat, one branch an identity passthrough
    spec = NetworkSpec(
        branches=(
            Branch("img", "img", (L.Conv2D(1, 2, 2, 2), L.Relu(), L.Flatten(), L.Dense(8, 3))),
            Branch("rf", "rf", ()),
        ),
        cell=None,
        head=(L.Dense(5, 1),),
    )
    params = init_params(spec, rng, np.float64)
    inputs = {
        "img": rng.normal(0.0, 1.0, size=(b, 1, 4, 4)),
        "rf": rng.normal(0.0, 1.0, size=(b, 2)),
    }
    target = rng.normal(0.0, 1.0, size=(b, 1))
    yield "Concat", spec, params, inputs, target


def gradcheck_report(seed: int = 0, cases_per_type: int = 3) -> list[tuple[str, float]]:
    """Max relative error per layer type over several random instances."""
    worst: dict[str, float] = {}
    for round_idx in range(cases_per_type):
        rng = np.random.default_rng(seed + round_idx)
        for name, spec, params, inputs, target in layer_cases(rng):
            err = _numeric_max_rel_err(spec, params, inputs, target)
            worst[name] = max(worst.get(name, 0.0), err)
    return sorted(worst.items())
