"""Named parameter storage with prefix-scoped adaptive-delta updates.

Parameters live under dot-separated paths. The teacher and student networks
own disjoint prefixes ("teacher." / "student."), so one network can be
updated while the other stays frozen. The store is single-writer: only the
optimizer step mutates parameter data.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Value
from .errors import ContractError


class ParameterStore:
    """Map from parameter path to leaf Value, plus per-path optimizer state.

    Each parameter carries two same-shaped accumulators: an exponential
    average of squared gradients and one of squared updates.
    """

    def __init__(self):
        self._params = {}
        self._sq_grad = {}
        self._sq_delta = {}

    def add(self, path, data):
        if path in self._params:
            raise ContractError(f"duplicate parameter path '{path}'")
        value = data if isinstance(data, Value) else Value(np.asarray(data, dtype=np.float64))
        self._params[path] = value
        self._sq_grad[path] = np.zeros_like(value.data)
        self._sq_delta[path] = np.zeros_like(value.data)
        return value

    def get(self, path):
        return self._params[path]

    def paths(self, prefix=""):
        return [p for p in self._params if p.startswith(prefix)]

    def items(self, prefix=""):
        return [(p, v) for p, v in self._params.items() if p.startswith(prefix)]

    def accumulators(self, path):
        return self._sq_grad[path], self._sq_delta[path]

    def set_accumulators(self, path, sq_grad, sq_delta):
        if sq_grad.shape != self._params[path].shape or sq_delta.shape != self._params[path].shape:
            raise ContractError(f"accumulator shape mismatch for '{path}'")
        self._sq_grad[path] = np.asarray(sq_grad, dtype=np.float64).copy()
        self._sq_delta[path] = np.asarray(sq_delta, dtype=np.float64).copy()

    def zero_grads(self, prefix=""):
        for _, v in self.items(prefix):
            v.zero_grad()

    def clear_grads(self, prefix=""):
        for _, v in self.items(prefix):
            v.clear_grad()

    def snapshot(self, prefix=""):
        """Copy of all parameter data under prefix, for change detection in tests."""
        return {p: v.data.copy() for p, v in self.items(prefix)}

    def __len__(self):
        return len(self._params)

    def __contains__(self, path):
        return path in self._params


def adadelta_step(store, prefix, rho=0.95, eps=1e-6):
    """Apply one adaptive-delta update to every parameter under ``prefix``.

    For each parameter with gradient g:
        Eg   <- rho*Eg + (1-rho)*g^2
        dx   <- -sqrt(Ed + eps)/sqrt(Eg + eps) * g
        x    <- x + dx
        Ed   <- rho*Ed + (1-rho)*dx^2
    Gradients under the prefix are cleared afterwards; parameters outside
    the prefix are untouched.
    """
    if not 0.0 < rho < 1.0:
        raise ContractError(f"rho must be in (0,1), got {rho}")
    if eps <= 0.0:
        raise ContractError(f"eps must be positive, got {eps}")
    matched = store.items(prefix)
    if not matched:
        raise ContractError(f"no parameters under prefix '{prefix}'")
    for path, p in matched:
        if not p.grad_populated:
            raise ContractError(f"missing gradient for parameter '{path}'")
    for path, p in matched:
        g = p._grad
        eg = store._sq_grad[path]
        ed = store._sq_delta[path]
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
        p.data += delta
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        p.clear_grad()
