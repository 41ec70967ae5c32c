"""
Closed-form values and derivatives of the catalog node functions.

All routines are batched: ``Z`` has shape (n, in_dim) and results carry the
batch as leading axis.
"""
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import List

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import expit

from comp_oc.models.graph import NodeFunction, NodeKind, SmoothFn


@lru_cache(maxsize=64)
def _tanh_poly(order: int) -> Polynomial:
    # d^k/dt^k tanh(t) = P_k(tanh(t)),  P_{k+1} = P_k' * (1 - y^2)
    poly = Polynomial([0.0, 1.0])
    for _ in range(order):
        poly = poly.deriv() * Polynomial([1.0, 0.0, -1.0])
    return poly


@lru_cache(maxsize=64)
def _sigmoid_poly(order: int) -> Polynomial:
    # d^k/dt^k sigmoid(t) = Q_k(sigmoid(t)),  Q_{k+1} = Q_k' * s(1 - s)
    poly = Polynomial([0.0, 1.0])
    for _ in range(order):
        poly = poly.deriv() * Polynomial([0.0, 1.0, -1.0])
    return poly


@lru_cache(maxsize=64)
def _gauss_poly(order: int) -> Polynomial:
    # d^k/dt^k exp(-t^2) = H_k(t) exp(-t^2),  H_{k+1} = H_k' - 2t H_k
    poly = Polynomial([1.0])
    for _ in range(order):
        poly = poly.deriv() - Polynomial([0.0, 2.0]) * poly
    return poly


def smooth_derivative(fn: NodeFunction, t: np.ndarray, order: int) -> np.ndarray:
    """Derivative of the scalar profile s of a smooth node, evaluated at t."""
    tag = fn.params.smooth
    if tag == SmoothFn.TANH:
        return _tanh_poly(order)(np.tanh(t))
    if tag == SmoothFn.SOFTPLUS:
        if order == 0:
            return np.logaddexp(0.0, t)
        return _sigmoid_poly(order - 1)(expit(t))
    if tag == SmoothFn.EXP_NEG_SQ:
        return _gauss_poly(order)(t) * np.exp(-t * t)
    if tag == SmoothFn.POLYNOMIAL:
        poly = Polynomial(fn.params.coefficients)
        return poly.deriv(order)(t) if order else poly(t)
    raise ValueError(f"unknown smooth function {tag!r}")


def _inner(fn: NodeFunction, Z: np.ndarray) -> np.ndarray:
    return fn.params.scale * Z + fn.params.shift


def value(fn: NodeFunction, Z: np.ndarray) -> np.ndarray:
    p = fn.params
    if fn.kind == NodeKind.AFFINE:
        return Z @ np.asarray(p.weights) + p.bias
    if fn.kind == NodeKind.QUADRATIC_FORM:
        Q = np.asarray(p.matrix)
        out = np.einsum("ni,ij,nj->n", Z, Q, Z) + p.bias
        if p.linear is not None:
            out = out + Z @ np.asarray(p.linear)
        return out
    if fn.kind == NodeKind.SQUARED_NORM:
        D = Z - np.asarray(p.center) if p.center is not None else Z
        return p.scale * np.sum(D * D, axis=1)
    if fn.kind == NodeKind.SCALAR_SMOOTH:
        return p.amplitude * smooth_derivative(fn, _inner(fn, Z[:, 0]), 0)
    if fn.kind == NodeKind.WEIGHTED_SUM:
        return smooth_derivative(fn, _inner(fn, Z), 0) @ np.asarray(p.weights) + p.bias
    raise ValueError(f"unknown node kind {fn.kind!r}")


def gradient(fn: NodeFunction, Z: np.ndarray) -> np.ndarray:
    p = fn.params
    n, d = Z.shape
    if fn.kind == NodeKind.AFFINE:
        return np.broadcast_to(np.asarray(p.weights), (n, d)).copy()
    if fn.kind == NodeKind.QUADRATIC_FORM:
        Q = np.asarray(p.matrix)
        out = Z @ (Q + Q.T).T
        if p.linear is not None:
            out = out + np.asarray(p.linear)
        return out
    if fn.kind == NodeKind.SQUARED_NORM:
        D = Z - np.asarray(p.center) if p.center is not None else Z
        return 2.0 * p.scale * D
    if fn.kind == NodeKind.SCALAR_SMOOTH:
        return p.amplitude * p.scale * smooth_derivative(fn, _inner(fn, Z), 1)
    if fn.kind == NodeKind.WEIGHTED_SUM:
        return np.asarray(p.weights) * p.scale * smooth_derivative(fn, _inner(fn, Z), 1)
    raise ValueError(f"unknown node kind {fn.kind!r}")


def hessian(fn: NodeFunction, Z: np.ndarray) -> np.ndarray:
    p = fn.params
    n, d = Z.shape
    if fn.kind == NodeKind.AFFINE:
        return np.zeros((n, d, d))
    if fn.kind == NodeKind.QUADRATIC_FORM:
        Q = np.asarray(p.matrix)
        return np.broadcast_to(Q + Q.T, (n, d, d)).copy()
    if fn.kind == NodeKind.SQUARED_NORM:
        return np.broadcast_to(2.0 * p.scale * np.eye(d), (n, d, d)).copy()
    if fn.kind == NodeKind.SCALAR_SMOOTH:
        second = p.amplitude * p.scale ** 2 * smooth_derivative(fn, _inner(fn, Z[:, 0]), 2)
        return second[:, None, None]
    if fn.kind == NodeKind.WEIGHTED_SUM:
        diag = np.asarray(p.weights) * p.scale ** 2 * smooth_derivative(fn, _inner(fn, Z), 2)
        out = np.zeros((n, d, d))
        idx = np.arange(d)
        out[:, idx, idx] = diag
        return out
    raise ValueError(f"unknown node kind {fn.kind!r}")


def partials(fn: NodeFunction, Z: np.ndarray, order: int) -> np.ndarray:
    """All partial derivatives D^alpha f with |alpha| = order, shape (n, #alpha).

    Multi-indices whose partial vanishes identically for the kind are dropped.
    """
    n, d = Z.shape
    p = fn.params
    if order == 0:
        return value(fn, Z)[:, None]
    if order == 1:
        return gradient(fn, Z)
    if fn.kind == NodeKind.SCALAR_SMOOTH:
        return (p.amplitude * p.scale ** order * smooth_derivative(fn, _inner(fn, Z[:, 0]), order))[:, None]
    if fn.kind == NodeKind.WEIGHTED_SUM:
        return np.asarray(p.weights) * p.scale ** order * smooth_derivative(fn, _inner(fn, Z), order)
    if order == 2 and fn.kind in (NodeKind.QUADRATIC_FORM, NodeKind.SQUARED_NORM):
        H = hessian(fn, Z[:1])[0]
        pairs: List[tuple] = list(combinations_with_replacement(range(d), 2))
        return np.broadcast_to(np.array([H[i, j] for i, j in pairs]), (n, len(pairs))).copy()
    return np.zeros((n, 0))


def polynomial_degree(fn: NodeFunction) -> float:
    """Degree of the node as a polynomial in its inputs; inf for transcendental kinds."""
    if fn.kind == NodeKind.AFFINE:
        return 1
    if fn.kind in (NodeKind.QUADRATIC_FORM, NodeKind.SQUARED_NORM):
        return 2
    if fn.params.smooth == SmoothFn.POLYNOMIAL:
        return max(len(np.trim_zeros(np.asarray(fn.params.coefficients), "b")) - 1, 0)
    return float("inf")
