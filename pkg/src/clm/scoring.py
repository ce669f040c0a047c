"""Generalized scoring rules: losses over a convex hypothesis space.

A loss here is called as ``loss(W, X)`` where ``W`` is one hypothesis of shape
``(dim,)`` or a stack ``(k, dim)``; it returns a scalar or a ``(k,)`` array.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .convex import (
    ConvexPotential,
    FeasibleSet,
    HalfSquaredNorm,
    NegativeEntropy,
    SolverOptions,
    as_point,
    minimize,
    numeric_gradient,
)
from .errors import DomainError, InfeasibleMeanError, ShapeError

# ---------------------------------------------------------------------------
# Outcomes
# ---------------------------------------------------------------------------


class Batch:
    """A labelled data batch: rows of features ``x`` with targets ``y``."""

    __slots__ = ("x", "y")

    def __init__(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ShapeError("batch needs one target per feature row")
        self.x = x
        self.y = y
        self.x.setflags(write=False)
        self.y.setflags(write=False)

    def __len__(self):
        return self.y.shape[0]

    def __eq__(self, other):
        return isinstance(other, Batch) and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)

    def __hash__(self):
        return hash((self.x.tobytes(), self.y.tobytes()))

    def __repr__(self):
        return f"Batch(n={len(self)}, d={self.x.shape[1]})"

    def to_json(self):
        return {"x": self.x.tolist(), "y": self.y.tolist()}


@dataclass(frozen=True)
class OutcomeSpace:
    """Where test data lives.

    ``finite``: the integers ``0..n-1``. ``dataset_batch``: :class:`Batch`
    objects with ``||x|| <= 1`` and ``y`` in ``[-1, 1]``. ``label_vector``:
    length-``m`` arrays with entries in the interval ``K``.
    """

    kind: str
    size: int
    interval: tuple = (-1.0, 1.0)
    batch_size: int = 1

    @classmethod
    def finite(cls, n: int) -> "OutcomeSpace":
        return cls("finite", n)

    @classmethod
    def dataset_batch(cls, d: int, batch_size: int = 1) -> "OutcomeSpace":
        return cls("dataset_batch", d, batch_size=batch_size)

    @classmethod
    def label_vector(cls, m: int, K=(1.0, 5.0)) -> "OutcomeSpace":
        lo, hi = float(K[0]), float(K[1])
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise DomainError("label interval must be bounded")
        return cls("label_vector", m, interval=(lo, hi))

    @property
    def enumerable(self) -> bool:
        return self.kind == "finite"

    def enumerate(self) -> list:
        if self.kind != "finite":
            raise DomainError(f"{self.kind} outcomes are not enumerable")
        return list(range(self.size))

    def validate(self, X) -> None:
        if self.kind == "finite":
            if not (isinstance(X, (int, np.integer)) and 0 <= X < self.size):
                raise DomainError(f"outcome {X!r} is not in [0, {self.size})")
        elif self.kind == "dataset_batch":
            if not isinstance(X, Batch) or X.x.shape[1] != self.size:
                raise DomainError("expected a Batch with matching feature dimension")
            bad = np.flatnonzero((np.linalg.norm(X.x, axis=1) > 1 + 1e-12) | (np.abs(X.y) > 1 + 1e-12))
            if len(bad):
                raise DomainError(f"batch rows {list(bad + 1)} violate ||x|| <= 1 or |y| <= 1")
        else:
            y = np.asarray(X, dtype=float)
            lo, hi = self.interval
            if y.shape != (self.size,) or np.any(y < lo - 1e-12) or np.any(y > hi + 1e-12):
                raise DomainError(f"label vector must have {self.size} entries in {self.interval}")

    def sample(self, rng: np.random.Generator, k: int = 1) -> list:
        if self.kind == "finite":
            return [int(v) for v in rng.integers(self.size, size=k)]
        if self.kind == "dataset_batch":
            out = []
            for _ in range(k):
                g = rng.standard_normal((self.batch_size, self.size))
                g /= np.linalg.norm(g, axis=1, keepdims=True)
                r = rng.random((self.batch_size, 1)) ** (1.0 / self.size)
                out.append(Batch(g * r, rng.uniform(-1, 1, self.batch_size)))
            return out
        lo, hi = self.interval
        return [rng.uniform(lo, hi, self.size) for _ in range(k)]

    def audit(self, seed: int = 0, n_random: int = 16) -> list:
        """Outcomes every audit checks: all of them when enumerable, else
        the extreme outcomes plus ``n_random`` seeded samples."""
        if self.kind == "finite":
            return self.enumerate()
        rng = np.random.default_rng(seed)
        if self.kind == "dataset_batch":
            extremes = []
            for j in range(self.size):
                for sx in (1.0, -1.0):
                    for sy in (1.0, -1.0):
                        e = np.zeros((1, self.size))
                        e[0, j] = sx
                        extremes.append(Batch(e, [sy]))
            return extremes + self.sample(rng, n_random)
        lo, hi = self.interval
        if self.size <= 10:
            grids = np.stack(np.meshgrid(*[[lo, hi]] * self.size, indexing="ij"), -1).reshape(-1, self.size)
            extremes = list(grids)
        else:
            extremes = [np.full(self.size, lo), np.full(self.size, hi)]
        return extremes + self.sample(rng, n_random)

    # -- JSON codec --------------------------------------------------------------
    def encode(self, X) -> Any:
        if isinstance(X, Belief):
            return {"belief": {"support": [self.encode(s) for s in X.support], "weights": X.weights.tolist()}}
        if self.kind == "finite":
            return int(X)
        if self.kind == "dataset_batch":
            return X.to_json()
        return [float(v) for v in np.asarray(X, dtype=float)]

    def decode(self, obj) -> Any:
        if isinstance(obj, dict) and "belief" in obj:
            b = obj["belief"]
            return Belief([self.decode(s) for s in b["support"]], b["weights"])
        if self.kind == "finite":
            X = int(obj)
        elif self.kind == "dataset_batch":
            X = Batch(obj["x"], obj["y"])
        else:
            X = np.asarray(obj, dtype=float)
        self.validate(X)
        return X


# ---------------------------------------------------------------------------
# Beliefs
# ---------------------------------------------------------------------------


class Belief:
    """A finitely supported distribution over outcomes."""

    def __init__(self, support: Sequence, weights):
        w = np.asarray(weights, dtype=float).reshape(-1)
        if len(support) != w.shape[0] or w.shape[0] == 0:
            raise ShapeError("belief needs one weight per support point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("belief weights must be non-negative and sum to 1")
        self.support = list(support)
        self.weights = w

    def __repr__(self):
        return f"Belief(k={len(self.support)})"

    def __iter__(self):
        return iter(zip(self.support, self.weights))

    @classmethod
    def point(cls, X) -> "Belief":
        return cls([X], [1.0])

    @classmethod
    def over_finite(cls, probs) -> "Belief":
        p = np.asarray(probs, dtype=float)
        return cls(list(range(len(p))), p)

    @classmethod
    def uniform(cls, support: Sequence) -> "Belief":
        return cls(support, np.full(len(support), 1.0 / len(support)))

    @classmethod
    def empirical(cls, samples: Sequence) -> "Belief":
        """Merge repeated (hashable) samples into weighted support points."""
        counts = Counter(samples)
        total = sum(counts.values())
        support = list(counts)
        return cls(support, np.array([counts[s] for s in support], dtype=float) / total)

    def probabilities(self, n: int) -> np.ndarray:
        """Dense probability vector for beliefs over ``0..n-1``."""
        p = np.zeros(n)
        for X, w in self:
            p[int(X)] += w
        return p


# ---------------------------------------------------------------------------
# Scoring rules
# ---------------------------------------------------------------------------


@dataclass
class Gsr:
    """A loss ``L(w; X)`` whose expected value has a convex minimizer set."""

    hypothesis_space: FeasibleSet
    outcomes: OutcomeSpace
    loss: Callable[[np.ndarray, Any], Any]
    loss_grad: Optional[Callable[[np.ndarray, Any], np.ndarray]] = None
    name: str = "gsr"
    divergence_based: bool = False

    @property
    def dim(self) -> int:
        return self.hypothesis_space.dim

    def grad(self, w, X) -> np.ndarray:
        if self.loss_grad is not None:
            return np.asarray(self.loss_grad(w, X), dtype=float)
        return numeric_gradient(lambda z: float(self.loss(z, X)), w)

    def scaled(self, alpha: float) -> "Gsr":
        loss, grad = self.loss, self.loss_grad
        return replace(
            self,
            loss=lambda W, X: alpha * loss(W, X),
            loss_grad=None if grad is None else (lambda w, X: alpha * grad(w, X)),
            name=f"{alpha:g}*{self.name}",
        )


@dataclass
class DivergenceGsr(Gsr):
    """``L(w; X) = D_R(rho(X), psi(w)) + f(X)``.

    ``psi`` defaults to the identity; ``psi_inv`` must be given whenever
    ``psi`` is.
    """

    R: Optional[ConvexPotential] = None
    rho: Optional[Callable] = None
    psi: Optional[Callable] = None
    psi_inv: Optional[Callable] = None
    f: Optional[Callable] = None
    divergence_based: bool = True

    def psi_of(self, W):
        return np.asarray(W, dtype=float) if self.psi is None else self.psi(W)

    def offset(self, X) -> float:
        return 0.0 if self.f is None else float(self.f(X))


def divergence_gsr(
    R: ConvexPotential,
    rho: Callable,
    hypothesis_space: FeasibleSet,
    outcomes: OutcomeSpace,
    *,
    psi: Optional[Callable] = None,
    psi_inv: Optional[Callable] = None,
    f: Optional[Callable] = None,
    name: str = "divergence_gsr",
) -> DivergenceGsr:
    if psi is not None and psi_inv is None:
        raise DomainError("a non-identity psi needs a registered inverse")

    def loss(W, X):
        mapped = np.asarray(W, dtype=float) if psi is None else psi(W)
        out = R.bregman(rho(X), mapped)
        return out if f is None else out + f(X)

    grad = None
    if psi is None:
        def grad(w, X):
            w = np.asarray(w, dtype=float)
            return -R.hessian(w) @ (np.asarray(rho(X), dtype=float) - w)

    return DivergenceGsr(
        hypothesis_space, outcomes, loss, grad, name=name, R=R, rho=rho, psi=psi, psi_inv=psi_inv, f=f
    )


def compression_gsr(n: int, floor: float = 0.0) -> DivergenceGsr:
    """Idealized code length ``-log q(i)`` of character ``i`` under ``q``.

    This is the divergence-based rule with negative entropy, ``rho(i) = e_i``
    and the identity map, so its mean minimizer is the true distribution.
    """
    eye = np.eye(n)
    L = divergence_gsr(
        NegativeEntropy(n),
        lambda i: eye[i],
        FeasibleSet.simplex(n, floor),
        OutcomeSpace.finite(n),
        name="compression",
    )

    def loss(W, i):
        with np.errstate(divide="ignore"):
            return -np.log(np.asarray(W, dtype=float)[..., i])

    def grad(w, i):
        g = np.zeros(n)
        g[i] = -1.0 / w[i]
        return g

    L.loss = loss
    L.loss_grad = grad
    return L


def regression_gsr(d: int, batch_size: int = 1) -> Gsr:
    """Half mean squared error of a linear predictor on the unit l2 ball.

    Not divergence-based; it is 2-Lipschitz in ``w`` for bounded data.
    """

    def loss(W, batch: Batch):
        resid = np.asarray(W, dtype=float) @ batch.x.T - batch.y
        return 0.5 * np.mean(resid * resid, axis=-1)

    def grad(w, batch: Batch):
        return batch.x.T @ (batch.x @ w - batch.y) / len(batch)

    return Gsr(
        FeasibleSet.l2_ball(d, 1.0),
        OutcomeSpace.dataset_batch(d, batch_size),
        loss,
        grad,
        name="regression",
    )


def label_gsr(m: int, K=(1.0, 5.0)) -> Gsr:
    """Total squared error of ``m`` predicted labels."""

    def loss(W, y):
        diff = np.asarray(W, dtype=float) - np.asarray(y, dtype=float)
        return np.sum(diff * diff, axis=-1)

    def grad(w, y):
        return 2.0 * (np.asarray(w, dtype=float) - np.asarray(y, dtype=float))

    return Gsr(
        FeasibleSet.box(m, K[0], K[1]),
        OutcomeSpace.label_vector(m, K),
        loss,
        grad,
        name="label",
    )


def squared_distance_gsr(hypothesis_space: FeasibleSet, outcomes: OutcomeSpace) -> DivergenceGsr:
    """``0.5 ||X - w||^2`` for vector outcomes: half-squared-norm divergence."""
    dim = hypothesis_space.dim
    return divergence_gsr(
        HalfSquaredNorm(dim),
        lambda X: np.asarray(X, dtype=float),
        hypothesis_space,
        outcomes,
        name="squared_distance",
    )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _expected(L: Gsr, W, P: Belief):
    total = 0.0
    for X, p in P:
        if p:
            total = total + p * L.loss(W, X)
    return total


def expected_loss(L: Gsr, w, P: Belief) -> float:
    """``sum_k P(k) L(w; X_k)``; ``w`` must lie in the hypothesis space."""
    w = as_point(w, L.dim)
    if not L.hypothesis_space.contains(w):
        raise DomainError("hypothesis lies outside the hypothesis space")
    return float(_expected(L, w, P))


def expected_loss_grid(L: Gsr, W: np.ndarray, P: Belief) -> np.ndarray:
    """Expected loss at each row of ``W`` (no membership checks)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.asarray(_expected(L, np.asarray(W, dtype=float), P), dtype=float)


def minimize_expected_loss(
    L: Gsr, P: Belief, seed: int = 0, opts: Optional[SolverOptions] = None, x0=None
) -> np.ndarray:
    """One element of the minimizer set of the expected loss under ``P``."""
    opts = opts or SolverOptions(seed=seed)

    def grad(w):
        g = np.zeros(L.dim)
        for X, p in P:
            if p:
                g += p * L.grad(w, X)
        return g

    res = minimize(lambda w: float(_expected(L, w, P)), L.hypothesis_space, opts, gradient=grad, x0=x0)
    return res.point


def mean_minimizer(L: DivergenceGsr, P: Belief) -> np.ndarray:
    """Closed-form minimizer ``psi^-1(E[rho(X)])`` of a divergence-based rule."""
    if not isinstance(L, DivergenceGsr) or L.rho is None:
        raise DomainError("mean_minimizer needs a divergence-based rule")
    mean = sum(p * np.asarray(L.rho(X), dtype=float) for X, p in P)
    if L.psi is None:
        w = mean
    else:
        w = np.asarray(L.psi_inv(mean), dtype=float)
        if not np.allclose(L.psi(w), mean, atol=1e-9):
            raise InfeasibleMeanError("mean payoff is outside the image of psi")
    # tight tolerance: a floor of 1e-9 must not admit zeros
    if not L.hypothesis_space.contains(w, tol=1e-12):
        raise InfeasibleMeanError("mean payoff maps outside the hypothesis space")
    return w


def audit_minimizer(L: Gsr, P: Belief, w, step: float = 1e-2, seed: int = 0) -> float:
    """Largest amount by which any audit-grid point beats ``w``.

    A value ``<= 1e-6`` certifies ``w`` against the grid.
    """
    grid = L.hypothesis_space.grid(step, seed=seed)
    vals = expected_loss_grid(L, grid, P)
    return float(expected_loss(L, w, P) - np.nanmin(vals))
