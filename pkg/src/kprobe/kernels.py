"""Kernels over projected embeddings and the distance they induce.

Every kernel is evaluated on the projected vectors u = B h_i, v = B h_j:

    linear       u . v
    polynomial   (u . v + c)^degree
    rbf          exp(-||u - v||^2 / (2 sigma2))
    sigmoid      tanh(a u . v + b)

A positive semi-definite kernel induces the Hilbert-space distance

    d(h_i, h_j) = sqrt(k(h_i,h_i) - 2 k(h_i,h_j) + k(h_j,h_j))

which for the linear kernel is the Euclidean distance between the
projections, and for the RBF kernel is sqrt(2 - 2 k), bounded by sqrt(2).
Gradients with respect to B are closed-form; the finite-difference route
exists only in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

KINDS = ("linear", "polynomial", "sigmoid", "rbf")

# Radicands more negative than this abort; in [-RADICAND_TOL, 0) they clamp
# to zero and increment a diagnostics counter.
RADICAND_TOL = 1e-9


class NegativeRadicandError(ArithmeticError):
    """Induced squared distance came out negative beyond numerical noise."""


@dataclass
class ClampCounter:
    """Counts radicand clamps so PSD violations stay visible."""

    count: int = 0

    def add(self, k: int = 1) -> None:
        self.count += k

    def reset(self) -> None:
        self.count = 0


CLAMP_COUNTER = ClampCounter()


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind plus hyperparameters.

    ``a`` and ``sigma2`` default to None, meaning "derive from the
    projection rank": resolve() fills a = 1/d2 and sigma2 = sqrt(d2).
    Positive a and b keep the sigmoid kernel close to PSD near the
    origin, but do not guarantee it; induced distances can still abort
    with NegativeRadicandError on adversarial inputs.
    """

    kind: str = "linear"
    c: float = 1.0
    degree: int = 2
    a: float | None = None
    b: float = 1.0
    sigma2: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "polynomial":
            if self.degree < 1 or int(self.degree) != self.degree:
                raise ValueError(f"degree must be a positive integer, got {self.degree}")
            if self.c < 0:
                raise ValueError(f"polynomial offset c must be >= 0, got {self.c}")
        if self.kind == "sigmoid":
            if self.a is not None and self.a <= 0:
                raise ValueError(f"sigmoid a must be > 0, got {self.a}")
            if self.b <= 0:
                raise ValueError(f"sigmoid b must be > 0, got {self.b}")
        if self.kind == "rbf" and self.sigma2 is not None and self.sigma2 <= 0:
            raise ValueError(f"rbf sigma2 must be > 0, got {self.sigma2}")

    def resolve(self, d2: int) -> "KernelSpec":
        """Fill rank-dependent defaults for a projection of rank d2."""
        out = self
        if out.kind == "sigmoid" and out.a is None:
            out = replace(out, a=1.0 / d2)
        if out.kind == "rbf" and out.sigma2 is None:
            out = replace(out, sigma2=float(np.sqrt(d2)))
        return out

    def to_json(self) -> str:
        doc = {"kind": self.kind, "c": self.c, "degree": self.degree, "b": self.b}
        if self.a is not None:
            doc["a"] = self.a
        if self.sigma2 is not None:
            doc["sigma2"] = self.sigma2
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json_obj(cls, doc: dict) -> "KernelSpec":
        known = {"kind", "c", "degree", "a", "b", "sigma2"}
        bad = set(doc) - known
        if bad:
            raise ValueError(f"unknown kernel spec fields {sorted(bad)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "KernelSpec":
        return cls.from_json_obj(json.loads(text))


def _check_dims(B: np.ndarray, *vecs: np.ndarray) -> None:
    if B.ndim != 2:
        raise ValueError(f"projection must be a matrix, got shape {B.shape}")
    for v in vecs:
        if v.shape[-1] != B.shape[1]:
            raise ValueError(
                f"vector width {v.shape[-1]} does not match projection "
                f"input width {B.shape[1]}"
            )


def _gram_value(spec: KernelSpec, s: float) -> float:
    """Kernel value as a function of the projected dot product."""
    if spec.kind == "linear":
        return s
    if spec.kind == "polynomial":
        return (s + spec.c) ** spec.degree
    if spec.kind == "sigmoid":
        return float(np.tanh(spec.a * s + spec.b))
    raise ValueError(f"{spec.kind} kernel is not a dot-product kernel")


def kernel_eval(
    spec: KernelSpec, B: np.ndarray, h_i: np.ndarray, h_j: np.ndarray
) -> float:
    """Evaluate the kernel on one pair of unprojected vectors."""
    _check_dims(B, h_i, h_j)
    u = B @ h_i
    v = B @ h_j
    if spec.kind == "rbf":
        if spec.sigma2 is None:
            raise ValueError("rbf sigma2 unset; call spec.resolve(d2) first")
        diff = u - v
        return float(np.exp(-(diff @ diff) / (2.0 * spec.sigma2)))
    if spec.kind == "sigmoid" and spec.a is None:
        raise ValueError("sigmoid a unset; call spec.resolve(d2) first")
    return float(_gram_value(spec, float(u @ v)))


def _guard_radicand(d2_val: float, counter: ClampCounter | None) -> float:
    if d2_val >= 0.0:
        return d2_val
    if d2_val < -RADICAND_TOL:
        raise NegativeRadicandError(
            f"induced squared distance {d2_val} below -{RADICAND_TOL}; "
            "kernel is not behaving as PSD"
        )
    (counter or CLAMP_COUNTER).add()
    return 0.0


def kernel_distance(
    spec: KernelSpec,
    B: np.ndarray,
    h_i: np.ndarray,
    h_j: np.ndarray,
    counter: ClampCounter | None = None,
) -> float:
    """Kernel-induced distance between two unprojected vectors.

    For the linear and RBF kernels the radicand is computed in a form that
    is nonnegative by construction; polynomial and sigmoid radicands pass
    through the clamp window.
    """
    _check_dims(B, h_i, h_j)
    u = B @ h_i
    v = B @ h_j
    diff = u - v
    q = float(diff @ diff)
    if spec.kind == "linear":
        return float(np.sqrt(q))
    if spec.kind == "rbf":
        if spec.sigma2 is None:
            raise ValueError("rbf sigma2 unset; call spec.resolve(d2) first")
        return float(np.sqrt(2.0 - 2.0 * np.exp(-q / (2.0 * spec.sigma2))))
    if spec.kind == "sigmoid" and spec.a is None:
        raise ValueError("sigmoid a unset; call spec.resolve(d2) first")
    radicand = (
        _gram_value(spec, float(u @ u))
        - 2.0 * _gram_value(spec, float(u @ v))
        + _gram_value(spec, float(v @ v))
    )
    return float(np.sqrt(_guard_radicand(radicand, counter)))


def pairwise_distances(
    spec: KernelSpec,
    B: np.ndarray,
    H: np.ndarray,
    counter: ClampCounter | None = None,
) -> np.ndarray:
    """n x n matrix of induced distances over the rows of H."""
    _check_dims(B, H)
    U = H @ B.T
    S = U @ U.T
    S = (S + S.T) / 2.0
    r = np.diag(S)
    if spec.kind in ("linear", "rbf"):
        q = np.maximum(r[:, None] + r[None, :] - 2.0 * S, 0.0)
        if spec.kind == "linear":
            d2 = q
        else:
            if spec.sigma2 is None:
                raise ValueError("rbf sigma2 unset; call spec.resolve(d2) first")
            d2 = 2.0 - 2.0 * np.exp(-q / (2.0 * spec.sigma2))
    else:
        if spec.kind == "sigmoid":
            if spec.a is None:
                raise ValueError("sigmoid a unset; call spec.resolve(d2) first")
            K = np.tanh(spec.a * S + spec.b)
        else:
            K = (S + spec.c) ** spec.degree
        kd = np.diag(K)
        d2 = kd[:, None] + kd[None, :] - 2.0 * K
        neg = d2 < 0.0
        if neg.any():
            worst = float(d2.min())
            if worst < -RADICAND_TOL:
                raise NegativeRadicandError(
                    f"induced squared distance {worst} below -{RADICAND_TOL}; "
                    "kernel is not behaving as PSD"
                )
            (counter or CLAMP_COUNTER).add(int(np.triu(neg, k=1).sum()))
            d2 = np.maximum(d2, 0.0)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, 0.0)
    return dist


def _gram_slope(spec: KernelSpec, S: np.ndarray) -> np.ndarray:
    """Derivative of the kernel value with respect to the dot product."""
    if spec.kind == "linear":
        return np.ones_like(S)
    if spec.kind == "polynomial":
        if spec.degree == 1:
            return np.ones_like(S)
        return spec.degree * (S + spec.c) ** (spec.degree - 1)
    if spec.kind == "sigmoid":
        t = np.tanh(spec.a * S + spec.b)
        return spec.a * (1.0 - t * t)
    raise ValueError(f"{spec.kind} kernel is not a dot-product kernel")


def weighted_distance_gradient(
    spec: KernelSpec,
    B: np.ndarray,
    H: np.ndarray,
    W: np.ndarray,
    dist: np.ndarray | None = None,
) -> np.ndarray:
    """sum over pairs i<j of W[i,j] * grad_B d(h_i, h_j).

    W must be symmetric with zero diagonal; pairs with W[i,j] = 0 are
    skipped, so the caller encodes subgradient choices by zeroing entries.
    Any remaining pair with zero distance is non-differentiable and raises.
    """
    _check_dims(B, H)
    if dist is None:
        dist = pairwise_distances(spec, B, H)
    active = W != 0.0
    if np.any(active & (dist == 0.0)):
        raise ValueError("distance gradient requested at zero distance")
    U = H @ B.T
    M = np.divide(W, dist, out=np.zeros_like(W), where=active)
    if spec.kind == "rbf":
        S = U @ U.T
        S = (S + S.T) / 2.0
        r = np.diag(S)
        q = np.maximum(r[:, None] + r[None, :] - 2.0 * S, 0.0)
        K = np.exp(-q / (2.0 * spec.sigma2))
        V = M * K / spec.sigma2
        L = np.diag(V.sum(axis=1)) - V
        return U.T @ L @ H
    S = U @ U.T
    S = (S + S.T) / 2.0
    slope = _gram_slope(spec, S)
    rho = np.diag(slope) * M.sum(axis=1)
    A = np.diag(rho) - M * slope
    return U.T @ A @ H


def distance_gradient(
    spec: KernelSpec, B: np.ndarray, h_i: np.ndarray, h_j: np.ndarray
) -> np.ndarray:
    """Gradient of the induced distance with respect to B, one pair."""
    d = kernel_distance(spec, B, h_i, h_j)
    if d == 0.0:
        raise ValueError(
            "distance is zero: not differentiable, use subgradient 0"
        )
    H = np.stack([h_i, h_j])
    W = np.array([[0.0, 1.0], [1.0, 0.0]])
    dist = np.array([[0.0, d], [d, 0.0]])
    return weighted_distance_gradient(spec, B, H, W, dist=dist)
