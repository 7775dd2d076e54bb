"""n-step probabilities, Green functions and the centred kernel J_p.

All series are built from the same dynamic-programming propagation of the
law of X_n on a padded box.  Mass that reaches the padding layer is
absorbed and remembered, which is what makes the truncation error
certifiable for drifted kernels:

    G(y, 0) - G_N(y, 0) <= G(0, 0) * sum_z lost(z) * P_z(hit y)

and P_z(hit y) <= min(1, exp(-theta0 (z - y).u)) where exp(-theta0 X.u) is a
martingale (u the unit drift).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit
from scipy import optimize, sparse
from scipy.sparse import linalg as sla

from .lattice import ModelError, TransitionKernel, directions

TABLE_VERSION = 1
DRIFT_EPS = 1e-15


class RecurrentKernelError(ModelError):
    """Green function requested for a recurrent kernel."""


# ---------------------------------------------------------------------------
# propagation on a padded box

@njit(cache=True)
def _propagate(P, Q, interior, boundary, offs, probs, lost):
    for i in range(Q.size):
        Q[i] = 0.0
    for idx in range(interior.size):
        i = interior[idx]
        m = P[i]
        if m != 0.0:
            for k in range(offs.size):
                Q[i + offs[k]] += probs[k] * m
    for idx in range(boundary.size):
        j = boundary[idx]
        lost[j] += Q[j]
        Q[j] = 0.0


@njit(cache=True)
def _accumulate(P, targets, acc):
    for k in range(targets.size):
        acc[k] += P[targets[k]]


class _Box:
    """Cube [-R, R]^d plus one absorbing padding layer, stored flat."""

    def __init__(self, d: int, R: int):
        self.d, self.R = d, R
        self.n = 2 * R + 3
        self.shape = (self.n,) * d
        self.size = self.n ** d
        strides = np.array([self.n ** (d - 1 - i) for i in range(d)], dtype=np.int64)
        self.strides = strides
        self.offs = directions(d) @ strides
        coords = np.indices(self.shape).reshape(d, -1)
        edge = np.any((coords == 0) | (coords == self.n - 1), axis=0)
        self.interior = np.flatnonzero(~edge).astype(np.int64)
        self.boundary = np.flatnonzero(edge).astype(np.int64)
        self._coords = coords

    def index(self, y) -> int:
        y = np.asarray(y, dtype=np.int64)
        if np.any(np.abs(y) > self.R):
            raise ModelError(f"site {tuple(y)} outside box of radius {self.R}")
        return int((y + self.R + 1) @ self.strides)

    def sites(self) -> np.ndarray:
        """Lattice coordinates of every flat cell, shape (size, d)."""
        return (self._coords - (self.R + 1)).T


def _l1_targets(points: Iterable[Sequence[int]]) -> list[tuple]:
    return [tuple(int(c) for c in x) for x in points]


def _cube(d: int, r: int) -> np.ndarray:
    return np.indices((2 * r + 1,) * d).reshape(d, -1).T - r


# ---------------------------------------------------------------------------
# n-step probabilities

@dataclass
class NStepTable:
    kernel: TransitionKernel
    n: int
    radius: int
    probs: np.ndarray      # (n + 1,) + (2 radius + 1,)*d, zero outside the l1 ball
    leaked: np.ndarray     # mass lost outside the l1 ball by step k

    def p(self, k: int, y) -> float:
        y = np.asarray(y, dtype=np.int64)
        if np.abs(y).sum() > self.radius:
            raise ModelError(f"|{tuple(y)}|_1 exceeds table radius {self.radius}")
        return float(self.probs[(k,) + tuple(y + self.radius)])

    def mass(self, k: int) -> float:
        return math.fsum(self.probs[k].ravel())


def n_step_probs(kernel: TransitionKernel, n: int, radius: Optional[int] = None) -> NStepTable:
    """p_k(0, y) for k <= n and |y|_1 <= radius by exact convolution.

    Mass that would leave the l1 ball is dropped and reported in ``leaked``;
    with radius >= n nothing is lost.
    """
    if n < 0:
        raise ModelError("n must be >= 0")
    d = kernel.dimension
    radius = n if radius is None else int(radius)
    if radius < 0:
        raise ModelError("radius must be >= 0")
    R = radius
    cube = _cube(d, R)
    ball = (np.abs(cube).sum(axis=1) <= R).reshape((2 * R + 1,) * d)
    out = np.zeros((n + 1,) + (2 * R + 1,) * d)
    leaked = np.zeros(n + 1)
    cur = np.zeros((2 * R + 3,) * d)
    inner = (slice(1, -1),) * d
    cur[(R + 1,) * d] = 1.0
    out[0] = cur[inner]
    dirs = directions(d)
    lost = 0.0
    for k in range(1, n + 1):
        nxt = np.zeros_like(cur)
        for e, pe in zip(dirs, kernel.probs):
            if pe == 0.0:
                continue
            dst = tuple(slice(1 + c, cur.shape[0] - 1 + c) for c in e)
            nxt[dst] += pe * cur[inner]
        body = nxt[inner]
        lost += math.fsum(nxt.ravel()) - math.fsum(body[ball])
        body[~ball] = 0.0
        cur = np.zeros_like(cur)
        cur[inner] = body
        out[k] = body
        leaked[k] = lost
    return NStepTable(kernel, n, R, out, leaked)


# ---------------------------------------------------------------------------
# Green functions

def drift_unit(kernel: TransitionKernel) -> tuple[np.ndarray, float]:
    v = kernel.drift()
    nv = float(np.linalg.norm(v))
    return (v / nv if nv > DRIFT_EPS else np.zeros_like(v)), nv


def _mgf(kernel: TransitionKernel, u: np.ndarray):
    proj = directions(kernel.dimension) @ u
    return lambda th: float(np.dot(kernel.probs, np.exp(-th * proj)))


def hitting_exponent(kernel: TransitionKernel, cap: float = 50.0) -> float:
    """theta0 > 0 with E exp(-theta0 (X_1 . u)) = 1, capped when no root exists."""
    u, nv = drift_unit(kernel)
    if nv <= DRIFT_EPS:
        return 0.0
    phi = _mgf(kernel, u)
    if phi(cap) < 1.0:
        return cap
    return float(optimize.brentq(lambda t: phi(t) - 1.0, 1e-12, cap, xtol=1e-14))


@dataclass
class GreenTable:
    """G^p(x, 0) on the cube |x|_inf <= radius."""

    kernel: TransitionKernel
    radius: int
    values: np.ndarray               # shape (2 radius + 1,)*d
    truncation_bound: float
    n_terms: int
    box_radius: int
    certified: bool = True
    method: str = "series"
    meta: dict = field(default_factory=dict)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.int64)
        if np.any(np.abs(x) > self.radius):
            raise ModelError(f"{tuple(x)} outside Green table radius {self.radius}")
        return float(self.values[tuple(x + self.radius)])

    def resolvent_residual(self) -> float:
        """max over interior x of |G(x) - delta_x0 - sum_e p(e) G(x + e)|."""
        d = self.kernel.dimension
        if self.radius < 1:
            return 0.0
        inner = (slice(1, -1),) * d
        rhs = np.zeros_like(self.values[inner])
        for e, pe in zip(directions(d), self.kernel.probs):
            rhs += pe * self.values[tuple(slice(1 + c, self.values.shape[0] - 1 + c) for c in e)]
        rhs[(self.radius - 1,) * d] += 1.0
        return float(np.max(np.abs(self.values[inner] - rhs)))

    def to_csv(self) -> str:
        return _table_csv("green", self.kernel, self.radius, self.truncation_bound,
                          {"n_terms": self.n_terms, "box_radius": self.box_radius,
                           "certified": int(self.certified), "method": self.method},
                          _cube(self.kernel.dimension, self.radius), self.values.ravel())


def green(kernel: TransitionKernel, points: Iterable[Sequence[int]] = ((0, 0),),
          tol: float = 1e-9, method: str = "auto", max_steps: int = 2_000_000,
          check_every: int = 200, max_cells: int = 3_000_000) -> GreenTable:
    """G(x, 0) = sum_n p_n(x, 0) on the smallest cube containing ``points``.

    Drifted kernels get a certified bound (see module docstring), either from
    the truncated series ("series") or from an absorbing-box solve whose gap is
    bounded by a second solve against the hitting weights ("solve").  "auto"
    solves in the plane and sums the series otherwise.  Zero-drift kernels in d >= 3 use a local-CLT tail estimate and
    are marked uncertified.  Boxes above ``max_cells`` sites are refused.
    """
    if not tol > 0:
        raise ModelError("tol must be positive")
    if method not in ("auto", "series", "solve"):
        raise ModelError(f"unknown Green method {method!r}")
    d = kernel.dimension
    pts = _l1_targets(points)
    if any(len(x) != d for x in pts):
        raise ModelError("points have the wrong dimension")
    r = max((max(abs(c) for c in x) for x in pts), default=0) + 1
    u, nv = drift_unit(kernel)
    if nv <= DRIFT_EPS:
        if d <= 2:
            raise RecurrentKernelError("recurrent kernel; Green function diverges")
        return _green_zero_drift(kernel, r, tol)
    theta0 = hitting_exponent(kernel)
    # G(0,0) guess only sizes the first box; bounds are computed a posteriori
    g_guess = 4.0
    R = r + int(math.ceil(math.log(4 * g_guess / tol) / theta0)) + 2
    if method == "auto":
        # planar sparse LU is cheap; in d >= 3 fill-in makes the series cheaper
        method = "solve" if d == 2 else "series"
    for _ in range(6):
        if (2 * R + 3) ** d > max_cells:
            raise ModelError(
                f"Green box of radius {R} in d={d} exceeds {max_cells} cells; "
                "use a larger drift or a looser tol")
        if method == "series":
            out = _green_drifted(kernel, r, R, tol, theta0, u, max_steps, check_every)
        else:
            out = _green_solve(kernel, r, R, tol, theta0, u)
        if out is not None:
            return out
        R = int(R * 1.4) + 1
    raise ModelError(f"Green function did not reach tol={tol} (box radius {R})")


def _box_system(kernel: TransitionKernel, R: int):
    """I - P restricted to [-R, R]^d, and for each cell the exits (cell, outside site, p)."""
    d = kernel.dimension
    n = 2 * R + 1
    N = n ** d
    strides = np.array([n ** (d - 1 - i) for i in range(d)], dtype=np.int64)
    coords = np.indices((n,) * d).reshape(d, -1).T
    rows, cols, vals = [np.arange(N)], [np.arange(N)], [np.ones(N)]
    exits = []
    for e, pe in zip(directions(d), kernel.probs):
        if pe == 0.0:
            continue
        nb = coords + e
        ok = np.all((nb >= 0) & (nb < n), axis=1)
        src = np.flatnonzero(ok)
        rows.append(src)
        cols.append(nb[ok] @ strides)
        vals.append(np.full(src.size, -pe))
        out = np.flatnonzero(~ok)
        exits.append((out, nb[out] - R, pe))
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(N, N))
    return A, strides, exits


def _green_solve(kernel, r, R, tol, theta0, u):
    d = kernel.dimension
    A, strides, exits = _box_system(kernel, R)
    lu = sla.splu(A)
    b = np.zeros(A.shape[0])
    b[np.full(d, R) @ strides] = 1.0
    cube = _cube(d, r)
    idx = (cube + R) @ strides
    # g(y) = delta_{y0} + sum_e p(e) g(y + e) inside the box, 0 outside
    G = lu.solve(b)
    vals = G[idx]
    # h(y) = E_y[min(1, exp(-theta0 (X_T - 0).u))]: bound on P(hit 0 after exit)
    hb = np.zeros(A.shape[0])
    for cells, sites, pe in exits:
        np.add.at(hb, cells, pe * np.minimum(1.0, np.exp(-theta0 * (sites @ u))))
    h = lu.solve(hb)
    h0 = float(h[np.full(d, R) @ strides])
    if h0 >= 0.5:
        return None
    gb = float(G[np.full(d, R) @ strides]) / (1.0 - h0)
    bounds = gb * h[idx]
    if bounds.max() > tol:
        return None
    shape = (2 * r + 1,) * d
    return GreenTable(kernel, r, vals.reshape(shape), float(bounds.max()), 0, R,
                      True, "solve", {"theta0": theta0, "G00_upper": gb,
                                      "point_bounds": bounds.reshape(shape)})


def _green_drifted(kernel, r, R, tol, theta0, u, max_steps, check_every):
    d = kernel.dimension
    box = _Box(d, R)
    cube = _cube(d, r)
    # G(x, 0) = sum_n p_n(0, -x)
    targets = np.array([box.index(-x) for x in cube], dtype=np.int64)
    proj = box.sites() @ u
    P = np.zeros(box.size)
    Q = np.zeros(box.size)
    lost = np.zeros(box.size)
    P[box.index(np.zeros(d, dtype=np.int64))] = 1.0
    acc = np.zeros(cube.shape[0])
    probs = np.ascontiguousarray(kernel.probs, dtype=float)
    ymax = float(np.max(cube @ u))
    i0 = int(np.flatnonzero(np.all(cube == 0, axis=1))[0])
    n = 0
    while True:
        _accumulate(P, targets, acc)
        if n % check_every == 0 or n >= max_steps:
            w = np.minimum(1.0, np.exp(-theta0 * (proj - ymax)))
            W_lost = float(np.dot(lost, w))
            W = W_lost + float(np.dot(P, w))
            if W < 0.5:
                gb = acc[i0] / (1.0 - W)
                if gb * W <= tol:
                    break
                if gb * W_lost > 0.5 * tol:
                    return None          # too much leaked: grow the box
            if n >= max_steps:
                raise ModelError(f"Green series needs more than {max_steps} steps")
        _propagate(P, Q, box.interior, box.boundary, box.offs, probs, lost)
        P, Q = Q, P
        n += 1
    # exact per-point bound, including mass still in the box after n steps
    bounds = np.empty(cube.shape[0])
    rest = lost + P
    w0 = np.minimum(1.0, np.exp(-theta0 * proj))
    gb = acc[i0] / (1.0 - float(np.dot(rest, w0)))
    for k, y in enumerate(cube):
        bounds[k] = gb * float(np.dot(rest, np.minimum(1.0, np.exp(-theta0 * (proj - y @ u)))))
    shape = (2 * r + 1,) * d
    return GreenTable(kernel, r, acc.reshape(shape), float(bounds.max()), n, R,
                      True, "series", {"theta0": theta0, "G00_upper": gb,
                                       "point_bounds": bounds.reshape(shape)})


def _green_zero_drift(kernel, r, tol, n_terms: int = 200) -> GreenTable:
    d = kernel.dimension
    n_terms = max(n_terms, 4 * r)
    # ~7 standard deviations per axis; the far tail is part of the estimate anyway
    sd = math.sqrt(n_terms * float(kernel.probs.max()) * 2)
    R = min(n_terms + 1, r + int(math.ceil(7 * sd)) + 2)
    box = _Box(d, R)
    cube = _cube(d, r)
    targets = np.array([box.index(-x) for x in cube], dtype=np.int64)
    P = np.zeros(box.size)
    Q = np.zeros(box.size)
    lost = np.zeros(box.size)
    P[box.index(np.zeros(d, dtype=np.int64))] = 1.0
    acc = np.zeros(cube.shape[0])
    last = np.zeros((2, cube.shape[0]))
    probs = np.ascontiguousarray(kernel.probs, dtype=float)
    for n in range(n_terms + 1):
        _accumulate(P, targets, acc)
        last[n % 2] = P[targets]
        if n < n_terms:
            _propagate(P, Q, box.interior, box.boundary, box.offs, probs, lost)
            P, Q = Q, P
    # p_n ~ c n^{-d/2}: remaining sum ~ p_N * N / (d/2 - 1) (parity-averaged)
    avg = 0.5 * (last[0] + last[1])
    tail = avg * n_terms / (0.5 * d - 1.0)
    shape = (2 * r + 1,) * d
    return GreenTable(kernel, r, (acc + tail).reshape(shape), float(np.max(np.abs(tail))),
                      n_terms, R, False, "series+clt-tail", {"tail": tail.reshape(shape)})


def green_box_solve(kernel: TransitionKernel, radius: int, r: int = 1) -> GreenTable:
    """Independent oracle: solve (I - P) G = delta_0 with an absorbing box boundary.

    Returns G_box(x, 0) on |x|_inf <= r; G_box <= G and the gap vanishes as the
    box grows for transient kernels.  No error bound is attached.
    """
    d = kernel.dimension
    A, strides, _ = _box_system(kernel, radius)
    b = np.zeros(A.shape[0])
    b[np.full(d, radius) @ strides] = 1.0
    G = sla.spsolve(A, b)
    cube = _cube(d, r)
    vals = G[(cube + radius) @ strides]
    return GreenTable(kernel, r, vals.reshape((2 * r + 1,) * d), float("nan"), 0, radius,
                      False, "box-solve")


# ---------------------------------------------------------------------------
# the centred kernel J_p

@dataclass
class JTable:
    """J_p(x) = lim_n sum_{k<=n} (p_k(0, -x) - p_k(0, 0)) on a point set."""

    kernel: TransitionKernel
    values: dict
    error_bound: float
    stable: bool
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, x) -> float:
        key = tuple(int(c) for c in x)
        try:
            return self.values[key]
        except KeyError:
            raise ModelError(f"J not tabulated at {key}") from None

    def covers(self, pts: Iterable[Sequence[int]]) -> list[tuple]:
        """Points from ``pts`` that are missing from the table."""
        return [tuple(int(c) for c in x) for x in pts
                if tuple(int(c) for c in x) not in self.values]

    @property
    def points(self) -> list[tuple]:
        return sorted(self.values)

    def to_csv(self) -> str:
        pts = np.array(self.points, dtype=np.int64).reshape(-1, self.kernel.dimension)
        return _table_csv("jkernel", self.kernel, 0, self.error_bound,
                          {"stable": int(self.stable),
                           "method": self.diagnostics.get("method", "")},
                          pts, np.array([self.values[tuple(p)] for p in self.points]))

    @classmethod
    def from_csv(cls, text: str) -> "JTable":
        kind, kernel, _, bound, meta, pts, vals = _read_table_csv(text)
        if kind != "jkernel":
            raise ModelError(f"expected a jkernel table, got {kind!r}")
        values = {tuple(int(c) for c in p): float(v) for p, v in zip(pts, vals)}
        return cls(kernel, values, bound, bool(int(meta.get("stable", 1))),
                   {"method": meta.get("method", "")})

    def reversed(self) -> "JTable":
        """Table of J_{p*}: J_{p*}(x) = J_p(-x)."""
        vals = {tuple(-c for c in x): v for x, v in self.values.items()}
        return JTable(self.kernel.reversed(), vals, self.error_bound, self.stable,
                      dict(self.diagnostics, reversed=True))


def richardson(values: Sequence[float], ratio: float = 2.0, powers: Optional[Sequence[int]] = None
               ) -> np.ndarray:
    """Richardson tableau for S(n) = S + c1/n + c2/n^2 + ... sampled at n * ratio^j.

    Row m holds the extrapolants after eliminating m error terms.
    """
    vals = np.asarray(values, dtype=float)
    k = vals.size
    T = np.full((k, k), np.nan)
    T[0] = vals
    powers = list(range(1, k)) if powers is None else list(powers)
    for m in range(1, k):
        f = ratio ** powers[m - 1]
        T[m, : k - m] = (f * T[m - 1, 1: k - m + 1] - T[m - 1, : k - m]) / (f - 1.0)
    return T


def _abel_fit(terms: np.ndarray, jmin: int, jmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Abel sums A(s) = sum_k s^k a_k at s = 1 - 2^-j and a log-aware extrapolation.

    A(h) ~ J + a h log h + b h + c h^2 log h + e h^2 with h = 1 - s; returns
    (limit estimates per point, raw Abel sums).
    """
    k = np.arange(terms.shape[0])
    js = np.arange(jmin, jmax + 1)
    hs = 2.0 ** -js
    A = np.array([(np.power(1.0 - h, k)[:, None] * terms).sum(axis=0) for h in hs])
    X = np.column_stack([np.ones_like(hs), hs * np.log(hs), hs, hs ** 2 * np.log(hs), hs ** 2])
    X = X[:, : min(5, len(hs))]
    coef, *_ = np.linalg.lstsq(X, A, rcond=None)
    return coef[0], A


def j_kernel(kernel: TransitionKernel, points: Iterable[Sequence[int]], tol: float = 1e-6,
             n_max: int = 1024, **green_kw) -> JTable:
    """Tabulate J_p on ``points`` (plus the origin).

    Transient kernels: J(x) = G(x, 0) - G(0, 0) from a certified Green table.
    Zero-drift kernels in d = 2: partial sums S_n at n = 2^j, Richardson in
    1/n, with an Abel-summation cross-check kept in the diagnostics.
    """
    d = kernel.dimension
    pts = sorted(set(_l1_targets(points)) | {(0,) * d})
    if any(len(x) != d for x in pts):
        raise ModelError("points have the wrong dimension")
    u, nv = drift_unit(kernel)
    if nv > DRIFT_EPS or d >= 3:
        gt = green(kernel, pts, tol=tol, **green_kw)
        g0 = gt((0,) * d)
        vals = {x: (gt(x) - g0 if any(x) else 0.0) for x in pts}
        return JTable(kernel, vals, 2 * gt.truncation_bound, gt.certified,
                      {"method": "green", "green_bound": gt.truncation_bound,
                       "n_terms": gt.n_terms, "box_radius": gt.box_radius})
    if d < 2:
        raise ModelError("J for recurrent kernels is implemented for d = 2 only")
    return _j_recurrent(kernel, pts, tol, n_max)


def _j_recurrent(kernel, pts, tol, n_max):
    d = kernel.dimension
    jtop = int(math.floor(math.log2(n_max)))
    N = 2 ** jtop
    r = max(max(abs(c) for c in x) for x in pts)
    sd = math.sqrt(max(2 * kernel.probs[2 * i] for i in range(d)) * N)
    R = min(N + r, r + int(math.ceil(9 * sd)) + 2)
    box = _Box(d, R)
    targets = np.array([box.index(tuple(-c for c in x)) for x in pts], dtype=np.int64)
    P = np.zeros(box.size)
    Q = np.zeros(box.size)
    lost = np.zeros(box.size)
    o = box.index(np.zeros(d, dtype=np.int64))
    P[o] = 1.0
    probs = np.ascontiguousarray(kernel.probs, dtype=float)
    terms = np.empty((N + 1, len(pts)))
    for n in range(N + 1):
        terms[n] = P[targets] - P[o]
        if n < N:
            _propagate(P, Q, box.interior, box.boundary, box.offs, probs, lost)
            P, Q = Q, P
    leaked = math.fsum(lost)
    S = np.cumsum(terms, axis=0)
    jmin = max(3, jtop - 6)
    ns = [2 ** j for j in range(jmin, jtop + 1)]
    est = np.empty(len(pts))
    spread = np.empty(len(pts))
    for i in range(len(pts)):
        T = richardson([S[n, i] for n in ns])
        m = len(ns) - 1
        est[i] = T[m, 0]
        spread[i] = abs(T[m, 0] - T[m - 1, 1])
    abel_j = max(2, int(math.floor(math.log2(N / 40.0))))
    abel_est, abel_raw = _abel_fit(terms, 1, abel_j)
    err = float(spread.max()) + leaked
    vals = {x: (float(v) if any(x) else 0.0) for x, v in zip(pts, est)}
    return JTable(kernel, vals, err, bool(err < tol), {
        "method": "partial-sums+richardson",
        "n_max": N,
        "box_radius": R,
        "leaked": leaked,
        "n_grid": ns,
        "partial_sums": {x: [float(S[n, i]) for n in ns] for i, x in enumerate(pts)},
        "richardson_spread": {x: float(s) for x, s in zip(pts, spread)},
        "abel_s": [1.0 - 2.0 ** -j for j in range(1, abel_j + 1)],
        "abel_estimate": {x: float(v) for x, v in zip(pts, abel_est)},
        "abel_discrepancy": float(np.max(np.abs(abel_est - est))),
    })


# ---------------------------------------------------------------------------
# 2D simple random walk potential kernel, exactly

@lru_cache(maxsize=None)
def _srw2d_table(n: int) -> dict:
    """a(x, y) = r + s/pi as (r, s) Fractions for n >= x >= y >= 0."""
    a = {}
    diag = Fraction(0)
    a[(0, 0)] = (Fraction(0), Fraction(0))
    for k in range(1, n + 1):
        diag += Fraction(4, 2 * k - 1)
        a[(k, k)] = (Fraction(0), diag)

    def get(x, y):
        x, y = abs(x), abs(y)
        return a[(x, y) if x >= y else (y, x)]

    def lin(*terms):
        r = sum((c * v[0] for c, v in terms), Fraction(0))
        s = sum((c * v[1] for c, v in terms), Fraction(0))
        return r, s

    if n >= 1:
        a[(1, 0)] = (Fraction(1), Fraction(0))
        for y in range(1, n):
            a[(y + 1, y)] = lin((2, get(y, y)), (-1, get(y, y - 1)))
    for m in range(2, n + 1):
        for y in range(0, n - m + 1):
            a[(y + m, y)] = lin((4, get(y + m - 1, y)), (-1, get(y + m - 2, y)),
                                (-1, get(y + m - 1, y + 1)), (-1, get(y + m - 1, y - 1)))
    return a


def srw2d_potential_kernel_exact(point: Sequence[int]) -> tuple[Fraction, Fraction]:
    """(r, s) with a(x) = r + s / pi exactly."""
    x, y = (abs(int(c)) for c in point)
    x, y = max(x, y), min(x, y)
    # tabulate in blocks so repeated queries share the cache
    n = max(8, 1 << max(x, 1).bit_length())
    return _srw2d_table(n)[(x, y)]


def srw2d_potential_kernel(point: Sequence[int]) -> float:
    """Potential kernel a(x) of the planar simple random walk."""
    if len(point) != 2:
        raise ModelError("the planar potential kernel needs a 2D point")
    r, s = srw2d_potential_kernel_exact(point)
    return float(r) + float(s) / math.pi


# ---------------------------------------------------------------------------
# CSV serialisation

def _table_csv(kind, kernel, radius, bound, meta, pts, vals) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["#table", kind, TABLE_VERSION])
    w.writerow(["#kernel", kernel.to_text()])
    w.writerow(["#radius", radius])
    w.writerow(["#bound", repr(float(bound))])
    for k in sorted(meta):
        w.writerow([f"#{k}", meta[k]])
    d = kernel.dimension
    w.writerow([f"x{i + 1}" for i in range(d)] + ["value"])
    for p, v in zip(np.asarray(pts).reshape(-1, d), vals):
        w.writerow([int(c) for c in p] + [repr(float(v))])
    return buf.getvalue()


def _read_table_csv(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    head = {}
    body = []
    for row in rows:
        if not row:
            continue
        if row[0].startswith("#"):
            head[row[0][1:]] = row[1:]
        elif row[0].startswith("x"):
            continue
        else:
            body.append(row)
    kind, version = head["table"][0], int(head["table"][1])
    if version != TABLE_VERSION:
        raise ModelError(f"unsupported table version {version}")
    kernel = TransitionKernel.from_text(head["kernel"][0])
    meta = {k: v[0] for k, v in head.items() if k not in ("table", "kernel", "radius", "bound")}
    pts = np.array([[int(c) for c in r[:-1]] for r in body], dtype=np.int64)
    vals = np.array([float(r[-1]) for r in body])
    return kind, kernel, int(head["radius"][0]), float(head["bound"][0]), meta, pts, vals
