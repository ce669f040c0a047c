"""Convex potentials, Bregman divergences, feasible sets and a small solver.

Everything here works on plain numpy arrays. Potentials evaluate along the
last axis so a stack of points ``(k, dim)`` can be scored in one call.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, rel_entr, softmax, xlogy

from .errors import DomainError, NonConvergenceError, ShapeError, UnboundedError

# Probabilities at or below this are treated as boundary points.
BOUNDARY_CLAMP = 1e-12

MAX_GRID_POINTS = 200_000


def as_point(x, dim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if dim is not None and arr.shape[-1] != dim:
        raise ShapeError(f"expected dimension {dim}, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Feasible sets
# ---------------------------------------------------------------------------


def _project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    # sort-based exact projection onto {z >= 0, sum z = total}
    n = v.shape[0]
    if total <= 0.0:
        return np.zeros(n)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    k = ind[cond][-1]
    theta = css[cond][-1] / k
    return np.maximum(v - theta, 0.0)


def _simplex_compositions(n: int, steps: int) -> np.ndarray:
    """All points of the simplex with coordinates in multiples of 1/steps."""
    rows = []
    for bars in itertools.combinations(range(steps + n - 1), n - 1):
        prev = -1
        parts = []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(steps + n - 1 - prev - 1)
        rows.append(parts)
    return np.asarray(rows, dtype=float) / steps


@dataclass(frozen=True)
class FeasibleSet:
    """A closed convex set with an exact Euclidean projection.

    Kinds: ``simplex`` (optionally with per-coordinate floors), ``l2_ball``,
    ``box``, ``all`` (the whole space) and ``intersection`` of other sets.
    """

    kind: str
    dim: int
    radius: float = 1.0
    center: Optional[tuple] = None
    lo: Optional[tuple] = None
    hi: Optional[tuple] = None
    floor: Optional[tuple] = None
    parts: tuple = field(default=())

    # -- constructors -----------------------------------------------------
    @classmethod
    def simplex(cls, n: int, floor=0.0) -> "FeasibleSet":
        fl = np.broadcast_to(np.asarray(floor, dtype=float), (n,))
        if np.any(fl < 0) or fl.sum() > 1.0:
            raise DomainError("simplex floors must be non-negative and sum to at most 1")
        return cls("simplex", n, floor=tuple(float(v) for v in fl))

    @classmethod
    def l2_ball(cls, d: int, radius: float = 1.0, center=None) -> "FeasibleSet":
        if radius < 0:
            raise DomainError("radius must be non-negative")
        c = None if center is None else tuple(float(v) for v in as_point(center, d))
        return cls("l2_ball", d, radius=float(radius), center=c)

    @classmethod
    def box(cls, m: int, lo, hi) -> "FeasibleSet":
        lo_ = np.broadcast_to(np.asarray(lo, dtype=float), (m,))
        hi_ = np.broadcast_to(np.asarray(hi, dtype=float), (m,))
        if np.any(lo_ > hi_):
            raise DomainError("box needs lo <= hi")
        return cls("box", m, lo=tuple(map(float, lo_)), hi=tuple(map(float, hi_)))

    @classmethod
    def all_of(cls, dim: int) -> "FeasibleSet":
        return cls("all", dim)

    @classmethod
    def intersection(cls, *sets: "FeasibleSet") -> "FeasibleSet":
        dims = {s.dim for s in sets}
        if len(dims) != 1:
            raise ShapeError("intersected sets must share a dimension")
        return cls("intersection", sets[0].dim, parts=tuple(sets))

    # -- helpers ------------------------------------------------------------
    @property
    def floor_array(self) -> np.ndarray:
        return np.zeros(self.dim) if self.floor is None else np.asarray(self.floor)

    @property
    def center_array(self) -> np.ndarray:
        return np.zeros(self.dim) if self.center is None else np.asarray(self.center)

    @property
    def bounded(self) -> bool:
        if self.kind in ("simplex", "l2_ball"):
            return True
        if self.kind == "box":
            return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))
        if self.kind == "intersection":
            return any(p.bounded for p in self.parts)
        return False

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = as_point(x, self.dim)
        if not np.all(np.isfinite(x)):
            return False
        if self.kind == "simplex":
            return bool(np.all(x >= self.floor_array - tol) and abs(x.sum() - 1.0) <= tol)
        if self.kind == "l2_ball":
            return bool(np.linalg.norm(x - self.center_array) <= self.radius + tol)
        if self.kind == "box":
            return bool(np.all(x >= np.asarray(self.lo) - tol) and np.all(x <= np.asarray(self.hi) + tol))
        if self.kind == "intersection":
            return all(p.contains(x, tol) for p in self.parts)
        return True

    def project(self, x) -> np.ndarray:
        x = as_point(x, self.dim)
        if not np.all(np.isfinite(x)):
            raise DomainError("cannot project a non-finite point")
        if self.kind == "simplex":
            fl = self.floor_array
            return fl + _project_simplex(x - fl, 1.0 - fl.sum())
        if self.kind == "l2_ball":
            c = self.center_array
            r = np.linalg.norm(x - c)
            if r <= self.radius:
                return x.copy()
            return c + (x - c) * (self.radius / r)
        if self.kind == "box":
            return np.clip(x, self.lo, self.hi)
        if self.kind == "intersection":
            return self._dykstra(x)
        return x.copy()

    def _dykstra(self, x: np.ndarray, max_iters: int = 10_000, tol: float = 1e-13) -> np.ndarray:
        y = x.copy()
        incs = [np.zeros_like(x) for _ in self.parts]
        for _ in range(max_iters):
            prev = y
            for i, part in enumerate(self.parts):
                z = part.project(y + incs[i])
                incs[i] = y + incs[i] - z
                y = z
            if np.linalg.norm(y - prev) <= tol:
                break
        return y

    def center_point(self) -> np.ndarray:
        if self.kind == "simplex":
            fl = self.floor_array
            return fl + (1.0 - fl.sum()) / self.dim
        if self.kind == "l2_ball":
            return self.center_array.copy()
        if self.kind == "box":
            lo, hi = np.asarray(self.lo), np.asarray(self.hi)
            mid = np.where(np.isfinite(lo) & np.isfinite(hi), (lo + hi) / 2, 0.0)
            return np.clip(mid, lo, hi)
        if self.kind == "intersection":
            return self.project(self.parts[0].center_point())
        return np.zeros(self.dim)

    def extreme_points(self) -> np.ndarray:
        """Vertices / axis extremes that audits must always include."""
        if self.kind == "simplex":
            fl = self.floor_array
            a = 1.0 - fl.sum()
            return fl + a * np.eye(self.dim)
        if self.kind == "l2_ball":
            eye = np.eye(self.dim) * self.radius
            return self.center_array + np.vstack([eye, -eye])
        if self.kind == "box" and self.bounded:
            if self.dim > 12:
                return np.vstack([np.asarray(self.lo), np.asarray(self.hi)])
            return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=float)
        return np.empty((0, self.dim))

    def sample(self, rng: np.random.Generator, k: int, scale: float = 1.0) -> np.ndarray:
        if self.kind == "simplex":
            fl = self.floor_array
            return fl + (1.0 - fl.sum()) * rng.dirichlet(np.ones(self.dim), size=k)
        if self.kind == "l2_ball":
            g = rng.standard_normal((k, self.dim))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            r = rng.random((k, 1)) ** (1.0 / self.dim)
            return self.center_array + self.radius * r * g
        if self.kind == "box":
            lo, hi = np.asarray(self.lo), np.asarray(self.hi)
            if self.bounded:
                return lo + (hi - lo) * rng.random((k, self.dim))
            pts = self.center_point() + scale * rng.standard_normal((k, self.dim))
            return np.clip(pts, lo, hi)
        if self.kind == "intersection":
            return np.array([self.project(p) for p in self.parts[0].sample(rng, k, scale)])
        return scale * rng.standard_normal((k, self.dim))

    def grid(self, step: float = 1e-2, max_points: int = MAX_GRID_POINTS, seed: int = 0) -> np.ndarray:
        """Deterministic audit points covering the set.

        A regular lattice for ``dim <= 3`` (coarsened if it would exceed
        ``max_points``), otherwise 10^4 seeded random points. Extreme points
        are always included.
        """
        if not self.bounded:
            raise DomainError(f"cannot grid an unbounded {self.kind} set")
        if self.dim > 3 or self.kind == "intersection":
            rng = np.random.default_rng(seed)
            pts = self.sample(rng, 10_000)
        elif self.kind == "simplex":
            steps = int(round(1.0 / step))
            while comb(steps + self.dim - 1, self.dim - 1) > max_points:
                steps //= 2
            fl = self.floor_array
            pts = fl + (1.0 - fl.sum()) * _simplex_compositions(self.dim, steps)
        else:
            if self.kind == "l2_ball":
                lo = self.center_array - self.radius
                hi = self.center_array + self.radius
            else:
                lo, hi = np.asarray(self.lo), np.asarray(self.hi)
            width = float(np.max(hi - lo))
            count = int(round(width / step)) if width > 0 else 0
            # odd counts keep the midpoint and both ends on the lattice
            count += count % 2
            while (count + 1) ** self.dim > max_points * 2:
                count = max(2, (count // 2) + (count // 2) % 2)
            axes = [np.linspace(a, b, count + 1) for a, b in zip(lo, hi)]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
            if self.kind == "l2_ball":
                keep = np.linalg.norm(mesh - self.center_array, axis=1) <= self.radius + 1e-12
                mesh = mesh[keep]
            pts = mesh
        ext = self.extreme_points()
        return np.vstack([pts, ext]) if len(ext) else pts


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iters: int = 10_000
    seed: int = 0
    n_starts: int = 5
    divergence_cap: float = 1e8


@dataclass
class OptimizeResult:
    point: np.ndarray
    value: float
    converged: bool
    iterations: int
    pg_norm: float
    start_index: int = 0


def numeric_gradient(f: Callable, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _descend(fun, grad, K: FeasibleSet, x0, opts: SolverOptions) -> OptimizeResult:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _descend_loop(fun, grad, K, x0, opts)


def _descend_loop(fun, grad, K, x0, opts):
    x = K.project(x0)
    fx = float(fun(x))
    if not np.isfinite(fx):
        return OptimizeResult(x, np.inf, False, 0, np.inf)
    g = grad(x)
    step = 1.0
    pg = np.inf
    for it in range(opts.max_iters):
        pg = float(np.linalg.norm(x - K.project(x - g)))
        if pg <= opts.tol:
            return OptimizeResult(x, fx, True, it, pg)
        t = step
        while True:
            x_new = K.project(x - t * g)
            f_new = float(fun(x_new))
            # Armijo along the projection arc
            if np.isfinite(f_new) and f_new <= fx + 1e-4 * float(g @ (x_new - x)):
                break
            t *= 0.5
            if t < 1e-20:
                return OptimizeResult(x, fx, False, it, pg)
        if np.linalg.norm(x_new) > opts.divergence_cap:
            raise UnboundedError("objective decreases without bound along the iterates")
        g_new = grad(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        # Barzilai-Borwein initial step for the next line search
        step = float(s @ s) / sy if sy > 1e-300 else min(2 * t, 1e10)
        step = min(max(step, 1e-12), 1e12)
        if not s.any():
            return OptimizeResult(x, fx, False, it, pg)
        x, fx, g = x_new, f_new, g_new
    return OptimizeResult(x, fx, False, opts.max_iters, pg)


def minimize(
    fun: Callable[[np.ndarray], float],
    K: FeasibleSet,
    opts: Optional[SolverOptions] = None,
    *,
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    x0=None,
) -> OptimizeResult:
    """Projected gradient descent with backtracking and a seeded multi-start.

    Starts are ``x0`` (if given) or the set's center, followed by seeded random
    points of ``K``. The best value wins; near-ties go to the earliest start.
    A run counts as converged when its projected-gradient norm is below
    ``opts.tol``, or, failing that, when two starts agree on the optimal value
    within 1e-8.

    Raises:
        NonConvergenceError: no start met the tolerance and the starts disagree.
        UnboundedError: iterates escaped past ``opts.divergence_cap``.
    """
    opts = opts or SolverOptions()
    grad = gradient if gradient is not None else (lambda z: numeric_gradient(fun, z))
    rng = np.random.default_rng(opts.seed)
    starts = [K.center_point() if x0 is None else as_point(x0, K.dim)]
    if opts.n_starts > 1:
        starts.extend(K.sample(rng, opts.n_starts - 1))
    results = []
    for i, s in enumerate(starts):
        res = _descend(fun, grad, K, s, opts)
        res.start_index = i
        results.append(res)
    finite = [r for r in results if np.isfinite(r.value)]
    if not finite:
        raise NonConvergenceError("objective is not finite at any start", best=results[0].point)
    best_val = min(r.value for r in finite)
    slack = 1e-12 * (1.0 + abs(best_val))
    best = next(r for r in finite if r.value <= best_val + slack)
    if any(r.converged for r in finite if r.value <= best_val + 1e-8 * (1.0 + abs(best_val))):
        best.converged = True
        return best
    agreeing = [r for r in finite if r.value <= best_val + 1e-8]
    if len(agreeing) >= 2:
        best.converged = True
        return best
    raise NonConvergenceError(
        f"no start reached tol={opts.tol} (best projected-gradient norm {best.pg_norm:.3g})",
        best=best.point,
        value=best.value,
    )


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


class ConvexPotential:
    """A strictly convex function with value, gradient and conjugate access.

    Built-in potentials subclass this; a custom one can be assembled from
    callables. When no closed-form conjugate is supplied, the conjugate is
    computed by maximizing ``g.x - R(x)`` over the effective domain.
    """

    name = "custom"

    def __init__(
        self,
        dim: int,
        value: Callable,
        gradient: Callable,
        domain: Optional[FeasibleSet] = None,
        *,
        conjugate: Optional[Callable] = None,
        conjugate_gradient: Optional[Callable] = None,
        hessian: Optional[Callable] = None,
        name: str = "custom",
        solver: Optional[SolverOptions] = None,
    ):
        self.dim = dim
        self._value = value
        self._gradient = gradient
        self.domain = domain or FeasibleSet.all_of(dim)
        self._conjugate = conjugate
        self._conjugate_gradient = conjugate_gradient
        self._hessian = hessian
        self.name = name
        self.solver = solver or SolverOptions()

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, name={self.name!r})"

    def value(self, x):
        return self._value(np.asarray(x, dtype=float))

    def gradient(self, x):
        return np.asarray(self._gradient(np.asarray(x, dtype=float)), dtype=float)

    def hessian(self, x) -> np.ndarray:
        if self._hessian is not None:
            return np.asarray(self._hessian(np.asarray(x, dtype=float)))
        x = np.asarray(x, dtype=float)
        h = 1e-6
        cols = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            cols.append((self.gradient(x + e) - self.gradient(x - e)) / (2 * h))
        return np.column_stack(cols)

    def in_interior(self, y) -> bool:
        return self.domain.contains(y)

    def bregman(self, x, y):
        """Unchecked divergence; broadcasts over leading axes."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.value(x) - self.value(y) - np.sum(self.gradient(y) * (x - y), axis=-1)

    @property
    def has_closed_conjugate(self) -> bool:
        return self._conjugate is not None

    def conjugate_value(self, g):
        g = as_point(g, self.dim)
        if self._conjugate is not None:
            return float(self._conjugate(g))
        x = self.conjugate_argmax(g)
        return float(g @ x - self.value(x))

    def conjugate_argmax(self, g) -> np.ndarray:
        """The maximizer of ``g.x - R(x)``, i.e. the gradient of the conjugate."""
        g = as_point(g, self.dim)
        if self._conjugate_gradient is not None:
            return np.asarray(self._conjugate_gradient(g), dtype=float)
        res = minimize(
            lambda x: float(self.value(x) - g @ x),
            self.domain,
            self.solver,
            gradient=lambda x: self.gradient(x) - g,
        )
        return res.point

    def dual(self) -> "ConvexPotential":
        return NumericConjugate(self)


class NumericConjugate(ConvexPotential):
    """R* evaluated by solving the inner maximization; its own dual is R."""

    def __init__(self, base: ConvexPotential):
        super().__init__(
            base.dim,
            value=self._eval,
            gradient=self._grad,
            domain=FeasibleSet.all_of(base.dim),
            name=f"conj({base.name})",
            solver=base.solver,
        )
        self.base = base

    def _eval(self, g):
        if g.ndim > 1:
            return np.array([self._eval(row) for row in g])
        x = self.base.conjugate_argmax(g)
        return float(g @ x - self.base.value(x))

    def _grad(self, g):
        if g.ndim > 1:
            return np.array([self._grad(row) for row in g])
        return self.base.conjugate_argmax(g)

    def conjugate_value(self, x):
        x = as_point(x, self.dim)
        if self.base.domain.contains(x):
            return float(self.base.value(x))
        return float(super().conjugate_value(x))

    def conjugate_argmax(self, x):
        return self.base.gradient(x)

    def dual(self):
        return self.base


class NegativeEntropy(ConvexPotential):
    """``(1/eta) * sum x log x`` on the probability simplex (0 log 0 = 0)."""

    name = "negative_entropy"

    def __init__(self, n: int, eta: float = 1.0, domain: Optional[FeasibleSet] = None):
        if eta <= 0:
            raise DomainError("eta must be positive")
        self.eta = float(eta)
        super().__init__(
            n,
            value=lambda x: np.sum(xlogy(x, x), axis=-1) / self.eta,
            gradient=lambda x: (np.log(np.maximum(x, BOUNDARY_CLAMP)) + 1.0) / self.eta,
            domain=domain or FeasibleSet.simplex(n),
            conjugate=lambda g: logsumexp(self.eta * g, axis=-1) / self.eta,
            conjugate_gradient=lambda g: softmax(self.eta * g, axis=-1),
            hessian=lambda x: np.diag(1.0 / (self.eta * np.maximum(x, BOUNDARY_CLAMP))),
            name=self.name,
        )

    def in_interior(self, y) -> bool:
        y = as_point(y, self.dim)
        return self.domain.contains(y) and bool(np.min(y) > BOUNDARY_CLAMP)

    def bregman(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (np.sum(rel_entr(x, y), axis=-1) - np.sum(x, axis=-1) + np.sum(y, axis=-1)) / self.eta

    def dual(self):
        return LogSumExp(self.dim, self.eta)


class LogSumExp(ConvexPotential):
    """The LMSR cost ``(1/eta) log sum exp(eta s)`` on all of R^n."""

    name = "lmsr"

    def __init__(self, n: int, eta: float = 1.0):
        if eta <= 0:
            raise DomainError("eta must be positive")
        self.eta = float(eta)
        super().__init__(
            n,
            value=lambda s: logsumexp(self.eta * s, axis=-1) / self.eta,
            gradient=lambda s: softmax(self.eta * s, axis=-1),
            domain=FeasibleSet.all_of(n),
            hessian=self._hess,
            name=self.name,
        )
        self._conjugate = self._conj

    def _hess(self, s):
        p = softmax(self.eta * s)
        return self.eta * (np.diag(p) - np.outer(p, p))

    def _conj(self, p):
        if not FeasibleSet.simplex(self.dim).contains(p, tol=1e-12):
            return np.inf
        return float(np.sum(xlogy(p, p)) / self.eta)

    def conjugate_argmax(self, p):
        """Invert prices to shares, anchored so the last coordinate is 0."""
        p = as_point(p, self.dim)
        if np.min(p) <= BOUNDARY_CLAMP:
            raise DomainError("boundary prices have no finite share vector")
        logp = np.log(p)
        return (logp - logp[-1]) / self.eta

    @property
    def translation_direction(self) -> np.ndarray:
        return np.ones(self.dim)

    def dual(self):
        return NegativeEntropy(self.dim, self.eta)


class HalfSquaredNorm(ConvexPotential):
    """``0.5 * ||x||^2``; self-conjugate when the domain is the whole space."""

    name = "half_squared_norm"

    def __init__(self, dim: int, domain: Optional[FeasibleSet] = None):
        domain = domain or FeasibleSet.all_of(dim)
        unrestricted = domain.kind == "all"
        super().__init__(
            dim,
            value=lambda x: 0.5 * np.sum(x * x, axis=-1),
            gradient=lambda x: np.array(x, dtype=float),
            domain=domain,
            conjugate=(lambda g: 0.5 * float(g @ g)) if unrestricted else None,
            conjugate_gradient=(lambda g: np.array(g, dtype=float)) if unrestricted else None,
            hessian=lambda x: np.eye(dim),
            name=self.name,
        )

    def bregman(self, x, y):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return 0.5 * np.sum(d * d, axis=-1)

    def dual(self):
        if self.domain.kind == "all":
            return self
        return NumericConjugate(self)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def bregman_divergence(R: ConvexPotential, x, y) -> float:
    """``R(x) - R(y) - grad R(y).(x - y)`` with domain and shape checks."""
    x = as_point(x, R.dim)
    y = as_point(y, R.dim)
    if x.ndim != 1 or y.ndim != 1:
        raise ShapeError("bregman_divergence takes single points; use R.bregman for stacks")
    if not R.domain.contains(x):
        raise DomainError("x lies outside the potential's domain")
    if not R.in_interior(y):
        raise DomainError("y must lie in the interior of the potential's domain")
    return float(R.bregman(x, y))


def conjugate(R: ConvexPotential, g) -> float:
    """``sup_x g.x - R(x)``, closed form when registered, numeric otherwise."""
    g = as_point(g, R.dim)
    if not np.all(np.isfinite(g)):
        raise DomainError("dual point must be finite")
    return R.conjugate_value(g)


def project(K: FeasibleSet, x) -> np.ndarray:
    return K.project(x)


def finite_conjugate_check(R: ConvexPotential, points: Sequence, seed: int = 0) -> bool:
    """Spot-check that the conjugate is finite at the given dual points.

    This can only ever be a sampled check, never a proof.
    """
    for g in points:
        try:
            val = conjugate(R, g)
        except UnboundedError:
            return False
        if not np.isfinite(val):
            return False
    return True
