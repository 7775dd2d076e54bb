"""Quenched random walks in lazily generated environments.

The hot loops are compiled with numba.  Every replica owns a counter-based
random stream (walk key, step counter), so results do not depend on the
number of worker threads or on execution order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit, prange

from ._rng import (as_u64, derive_key, mix64, site_key, site_uniform_at,
                   stream_uniform, tau_key, to_unit)
from .lattice import EnvironmentField, ModelError, directions

DEFAULT_MAX_STEPS = 10_000_000
BOUNDARY_MARGIN = 1e-9

FRONT, BACK, SIDE, CENSORED = 0, 1, 2, 3
EXIT_NAMES = ("front", "back", "side", "censored")


# ---------------------------------------------------------------------------
# compiled primitives
#
# Replicas are advanced in interleaved blocks of BLOCK walkers: the per-step
# work is a short dependent chain (position -> site hash -> jump), and
# interleaving independent chains keeps the core busy.

BLOCK = 8


@njit(cache=True, inline="always")
def _count_below(cdf, row, u):
    # branch-free inverse cdf lookup; the last entry is 1 by construction
    k = 0
    for i in range(cdf.shape[1] - 1):
        k += np.int64(u >= cdf[row, i])
    return k


@njit(cache=True, inline="always")
def _atom_at(atom_cdf, key, pos, r, off, j, period):
    u = site_uniform_at(key, pos, r, off, j, period)
    return _count_below(atom_cdf, 0, u)


@njit(cache=True, inline="always")
def _advance(pos, r, dirs, atom_cdf, kern_cdf, period, skey, walk_key, counter, zero):
    a = _atom_at(atom_cdf, skey, pos, r, zero, 0, period)
    k = _count_below(kern_cdf, a, stream_uniform(walk_key, counter))
    for i in range(pos.shape[1]):
        pos[r, i] += dirs[k, i]
    return k


@njit(cache=True, inline="always")
def _pattern_code(pos, r, offsets, atom_cdf, skey, period, n_atoms):
    code = 0
    for j in range(offsets.shape[0]):
        code = code * n_atoms + _atom_at(atom_cdf, skey, pos, r, offsets, j, period)
    return code


@njit(cache=True)
def _site_keys(env_seeds):
    out = np.empty(env_seeds.shape[0], dtype=np.uint64)
    for i in range(env_seeds.shape[0]):
        out[i] = site_key(env_seeds[i])
    return out


@njit(cache=True)
def _path(dirs, atom_cdf, kern_cdf, period, env_seed, walk_key, start, counter0, n):
    d = start.shape[0]
    zero = np.zeros((1, d), dtype=np.int64)
    skey = site_key(env_seed)
    out = np.empty((n + 1, d), dtype=np.int64)
    pos = start.copy().reshape(1, d)
    out[0] = pos[0]
    for t in range(n):
        _advance(pos, 0, dirs, atom_cdf, kern_cdf, period, skey, walk_key, counter0 + t, zero)
        out[t + 1] = pos[0]
    return out


@njit(cache=True, parallel=True)
def _displacements(dirs, atom_cdf, kern_cdf, period, env_seeds, walk_keys, n_steps, burn_in):
    """X_{n_steps} - X_{burn_in} for each replica, walks started at the origin."""
    nrep = env_seeds.shape[0]
    d = dirs.shape[1]
    skeys = _site_keys(env_seeds)
    out = np.zeros((nrep, d), dtype=np.int64)
    nblocks = (nrep + BLOCK - 1) // BLOCK
    for b in prange(nblocks):
        lo = b * BLOCK
        m = min(BLOCK, nrep - lo)
        zero = np.zeros((1, d), dtype=np.int64)
        pos = np.zeros((m, d), dtype=np.int64)
        mark = np.zeros((m, d), dtype=np.int64)
        for t in range(n_steps):
            if t == burn_in:
                mark[:, :] = pos
            for r in range(m):
                _advance(pos, r, dirs, atom_cdf, kern_cdf, period, skeys[lo + r],
                         walk_keys[lo + r], t, zero)
        if burn_in >= n_steps:
            mark[:, :] = pos
        for r in range(m):
            for i in range(d):
                out[lo + r, i] = pos[r, i] - mark[r, i]
    return out


@njit(cache=True, parallel=True)
def _window_counts(dirs, atom_cdf, kern_cdf, period, env_seeds, walk_keys, offsets,
                   n_atoms, n_patterns, n_steps, burn_in, split):
    """Per-replica pattern counts of t_{X_t} omega on the window for burn_in <= t < n_steps,
    kept separately for t < split and t >= split."""
    nrep = env_seeds.shape[0]
    d = dirs.shape[1]
    skeys = _site_keys(env_seeds)
    out = np.zeros((nrep, 2, n_patterns), dtype=np.int64)
    nblocks = (nrep + BLOCK - 1) // BLOCK
    for b in prange(nblocks):
        lo = b * BLOCK
        m = min(BLOCK, nrep - lo)
        zero = np.zeros((1, d), dtype=np.int64)
        pos = np.zeros((m, d), dtype=np.int64)
        for t in range(n_steps):
            half = 1 if t >= split else 0
            for r in range(m):
                if t >= burn_in:
                    c = _pattern_code(pos, r, offsets, atom_cdf, skeys[lo + r], period, n_atoms)
                    out[lo + r, half, c] += 1
                _advance(pos, r, dirs, atom_cdf, kern_cdf, period, skeys[lo + r],
                         walk_keys[lo + r], t, zero)
    return out


@njit(cache=True)
def _pattern_sequence(dirs, atom_cdf, kern_cdf, period, env_seed, walk_key, start,
                      offsets, n_atoms, n):
    d = dirs.shape[1]
    zero = np.zeros((1, d), dtype=np.int64)
    skey = site_key(env_seed)
    pos = start.copy().reshape(1, d)
    out = np.empty(n + 1, dtype=np.int64)
    for t in range(n + 1):
        out[t] = _pattern_code(pos, 0, offsets, atom_cdf, skey, period, n_atoms)
        if t < n:
            _advance(pos, 0, dirs, atom_cdf, kern_cdf, period, skey, walk_key, t, zero)
    return out


@njit(cache=True)
def _geometric_tau(walk_key, delta):
    # P(tau >= k) = delta^k; u in (0, 1]
    u = 1.0 - to_unit(mix64(tau_key(walk_key)))
    if delta <= 0.0:
        return 0
    return int(math.floor(math.log(u) / math.log(delta)))


@njit(cache=True, parallel=True)
def _killed_counts(dirs, atom_cdf, kern_cdf, period, env_seeds, walk_keys, delta,
                   offsets, n_atoms, f_mask):
    """Per replica: tau and #{n <= tau : f(pattern of t_{X_n} omega) = 1}."""
    nrep = env_seeds.shape[0]
    d = dirs.shape[1]
    skeys = _site_keys(env_seeds)
    taus = np.zeros(nrep, dtype=np.int64)
    hits = np.zeros(nrep, dtype=np.int64)
    for r in range(nrep):
        taus[r] = _geometric_tau(walk_keys[r], delta)
    nblocks = (nrep + BLOCK - 1) // BLOCK
    for b in prange(nblocks):
        lo = b * BLOCK
        m = min(BLOCK, nrep - lo)
        zero = np.zeros((1, d), dtype=np.int64)
        pos = np.zeros((m, d), dtype=np.int64)
        tmax = 0
        for r in range(m):
            tmax = max(tmax, taus[lo + r])
        for t in range(tmax + 1):
            for r in range(m):
                if t <= taus[lo + r]:
                    c = _pattern_code(pos, r, offsets, atom_cdf, skeys[lo + r], period, n_atoms)
                    if f_mask[c]:
                        hits[lo + r] += 1
                    if t < taus[lo + r]:
                        _advance(pos, r, dirs, atom_cdf, kern_cdf, period, skeys[lo + r],
                                 walk_keys[lo + r], t, zero)
    return taus, hits


@njit(cache=True)
def _box_status(pos, r, axis, sign, lvec, rot, half_long, half_trans):
    """0 inside, else 1 + FRONT / BACK / SIDE."""
    d = pos.shape[1]
    if axis >= 0:
        y1 = sign * pos[r, axis]
        if y1 >= half_long:
            return 1 + FRONT
        if y1 <= -half_long:
            return 1 + BACK
        for i in range(d):
            if i != axis and (pos[r, i] >= half_trans or pos[r, i] <= -half_trans):
                return 1 + SIDE
        return 0
    y1 = 0.0
    for i in range(d):
        y1 += lvec[i] * pos[r, i]
    if y1 >= half_long - BOUNDARY_MARGIN:
        return 1 + FRONT
    if y1 <= -half_long + BOUNDARY_MARGIN:
        return 1 + BACK
    for j in range(1, d):
        yj = 0.0
        for i in range(d):
            yj += rot[i, j] * pos[r, i]
        if yj >= half_trans - BOUNDARY_MARGIN or yj <= -half_trans + BOUNDARY_MARGIN:
            return 1 + SIDE
    return 0


@njit(cache=True, parallel=True)
def _exit_runs(dirs, atom_cdf, kern_cdf, period, env_seeds, walk_keys, start, axis, sign,
               lvec, rot, half_long, half_trans, max_steps):
    nrep = env_seeds.shape[0]
    d = dirs.shape[1]
    skeys = _site_keys(env_seeds)
    kinds = np.full(nrep, CENSORED, dtype=np.int64)
    steps = np.zeros(nrep, dtype=np.int64)
    where = np.zeros((nrep, d), dtype=np.int64)
    nblocks = (nrep + BLOCK - 1) // BLOCK
    for b in prange(nblocks):
        lo = b * BLOCK
        m = min(BLOCK, nrep - lo)
        zero = np.zeros((1, d), dtype=np.int64)
        pos = np.zeros((m, d), dtype=np.int64)
        active = np.ones(m, dtype=np.bool_)
        for r in range(m):
            pos[r] = start
        n_active = m
        t = 0
        while n_active > 0 and t < max_steps:
            for r in range(m):
                if active[r]:
                    _advance(pos, r, dirs, atom_cdf, kern_cdf, period, skeys[lo + r],
                             walk_keys[lo + r], t, zero)
                    s = _box_status(pos, r, axis, sign, lvec, rot, half_long, half_trans)
                    if s > 0:
                        kinds[lo + r] = s - 1
                        steps[lo + r] = t + 1
                        active[r] = False
                        n_active -= 1
            t += 1
        for r in range(m):
            if active[r]:
                steps[lo + r] = t
            where[lo + r] = pos[r]
    return kinds, steps, where


# ---------------------------------------------------------------------------
# packing

@dataclass(frozen=True)
class _Packed:
    dirs: np.ndarray
    atom_cdf: np.ndarray
    kern_cdf: np.ndarray
    period: int
    n_atoms: int


def pack(env: EnvironmentField) -> _Packed:
    kern = env.atom_kernels
    kern_cdf = np.cumsum(kern, axis=1)
    kern_cdf[:, -1] = 1.0
    atom_cdf = np.cumsum(env.model.weights)
    atom_cdf[-1] = 1.0
    return _Packed(directions(env.dimension), atom_cdf.reshape(1, -1),
                   np.ascontiguousarray(kern_cdf), int(env.period or 0), env.model.n_atoms)


def replica_keys(seed: int, n: int, offset: int = 0) -> np.ndarray:
    s = as_u64(seed)
    return np.array([derive_key(s, offset + i) for i in range(n)], dtype=np.uint64)


def replica_env_seeds(env: EnvironmentField, n: int, fixed: bool, offset: int = 0) -> np.ndarray:
    """Fixed: every replica sees ``env``; otherwise each gets a derived seed."""
    if fixed:
        return np.full(n, as_u64(env.seed), dtype=np.uint64)
    return replica_keys(env.seed, n, offset)


# ---------------------------------------------------------------------------
# walk state and single steps

@dataclass(frozen=True)
class WalkState:
    position: tuple
    step: int
    key: int

    @classmethod
    def start(cls, x, walk_seed: int, run_id: int = 0) -> "WalkState":
        return cls(tuple(int(c) for c in x), 0, int(derive_key(as_u64(walk_seed), run_id)))


def step(env: EnvironmentField, state: WalkState) -> WalkState:
    pk = pack(env)
    pos = np.array(state.position, dtype=np.int64)
    p = _path(pk.dirs, pk.atom_cdf, pk.kern_cdf, pk.period, as_u64(env.seed),
              as_u64(state.key), pos, state.step, 1)
    return WalkState(tuple(int(c) for c in p[1]), state.step + 1, state.key)


def path(env: EnvironmentField, start, n: int, walk_seed: int = 0, run_id: int = 0) -> np.ndarray:
    """Positions X_0..X_n of one quenched walk, shape (n + 1, d)."""
    pk = pack(env)
    key = derive_key(as_u64(walk_seed), run_id)
    return _path(pk.dirs, pk.atom_cdf, pk.kern_cdf, pk.period, as_u64(env.seed),
                 as_u64(key), np.asarray(start, dtype=np.int64), 0, int(n))


# ---------------------------------------------------------------------------
# slab boxes and exit times

def householder(l: np.ndarray) -> np.ndarray:
    """Orthonormal matrix whose first column is ``l`` (reflection e1 -> l)."""
    l = np.asarray(l, dtype=float)
    d = l.size
    e1 = np.zeros(d)
    e1[0] = 1.0
    v = e1 - l
    nv = float(v @ v)
    if nv < 1e-30:
        return np.eye(d)
    return np.eye(d) - 2.0 * np.outer(v, v) / nv


@dataclass(frozen=True, eq=False)
class SlabBox:
    """B_{l,L}: |x.l| < L longitudinally, 70 L^3 in each transverse direction."""

    direction: np.ndarray
    L: float
    transverse_factor: float = 70.0

    def __post_init__(self):
        l = np.asarray(self.direction, dtype=float).reshape(-1)
        n = np.linalg.norm(l)
        if n == 0:
            raise ModelError("box direction must be non-zero")
        l = l / n
        object.__setattr__(self, "direction", l)
        if not self.L > 0:
            raise ModelError("box size L must be positive")

    @property
    def dimension(self) -> int:
        return self.direction.size

    @property
    def half_transverse(self) -> float:
        return self.transverse_factor * float(self.L) ** 3

    @property
    def rotation(self) -> np.ndarray:
        return householder(self.direction)

    @property
    def axis(self) -> tuple[int, int]:
        """(axis, sign) if l is a coordinate direction, else (-1, 0)."""
        nz = np.flatnonzero(np.abs(self.direction) > 1e-15)
        if nz.size == 1 and abs(abs(self.direction[nz[0]]) - 1.0) < 1e-15:
            return int(nz[0]), int(np.sign(self.direction[nz[0]]))
        return -1, 0

    def _args(self):
        axis, sign = self.axis
        return (axis, sign, self.direction, np.ascontiguousarray(self.rotation),
                float(self.L), self.half_transverse)

    def status(self, x) -> int:
        """0 if inside, else 1 + FRONT / BACK / SIDE."""
        pos = np.asarray(x, dtype=np.int64).reshape(1, -1)
        return int(_box_status(pos, 0, *self._args()))

    def contains(self, x) -> bool:
        return self.status(x) == 0


@dataclass(frozen=True)
class ExitResult:
    position: tuple
    step: int
    kind: str
    censored: bool

    @property
    def front(self) -> bool:
        return self.kind == "front"


@dataclass
class ExitBatch:
    kinds: np.ndarray
    steps: np.ndarray
    positions: np.ndarray
    env_seeds: np.ndarray
    walk_keys: np.ndarray
    max_steps: int

    @property
    def n(self) -> int:
        return self.kinds.size

    def count(self, kind: int) -> int:
        return int(np.count_nonzero(self.kinds == kind))

    def fractions(self) -> dict:
        return {name: self.count(k) / self.n for k, name in enumerate(EXIT_NAMES)}

    def write_csv(self, fh, walk_seed: int) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "env_seed", "walk_seed", "exit_step", "exit_side", "censored"])
        for i in range(self.n):
            w.writerow([i, int(self.env_seeds[i]), int(walk_seed), int(self.steps[i]),
                        EXIT_NAMES[int(self.kinds[i])], int(self.kinds[i] == CENSORED)])


def run_until_exit(env: EnvironmentField, box: SlabBox, start=None,
                   max_steps: int = DEFAULT_MAX_STEPS, walk_seed: int = 0,
                   run_id: int = 0) -> ExitResult:
    start = np.zeros(env.dimension, dtype=np.int64) if start is None else np.asarray(start, np.int64)
    if not box.contains(start):
        raise ModelError(f"start {tuple(start)} is not inside the box")
    batch = _exit(env, box, start, np.array([as_u64(env.seed)], dtype=np.uint64),
                  np.array([derive_key(as_u64(walk_seed), run_id)], dtype=np.uint64), max_steps)
    kind = int(batch.kinds[0])
    return ExitResult(tuple(int(c) for c in batch.positions[0]), int(batch.steps[0]),
                      EXIT_NAMES[kind], kind == CENSORED)


def exit_batch(env: EnvironmentField, box: SlabBox, n_runs: int, walk_seed: int,
               max_steps: int = DEFAULT_MAX_STEPS, fresh_environments: bool = True,
               start=None) -> ExitBatch:
    """Independent exit runs; with fresh environments run i uses derive_seed(env.seed, i)."""
    start = np.zeros(env.dimension, dtype=np.int64) if start is None else np.asarray(start, np.int64)
    if not box.contains(start):
        raise ModelError(f"start {tuple(start)} is not inside the box")
    env_seeds = replica_env_seeds(env, n_runs, fixed=not fresh_environments)
    keys = replica_keys(walk_seed, n_runs)
    return _exit(env, box, start, env_seeds, keys, max_steps)


def _exit(env, box, start, env_seeds, keys, max_steps) -> ExitBatch:
    if box.dimension != env.dimension:
        raise ModelError("box and environment dimensions differ")
    pk = pack(env)
    kinds, steps, where = _exit_runs(pk.dirs, pk.atom_cdf, pk.kern_cdf, pk.period, env_seeds,
                                     keys, start, *box._args(), int(max_steps))
    return ExitBatch(kinds, steps, where, env_seeds, keys, int(max_steps))


# ---------------------------------------------------------------------------
# environment seen from the walker

def canonical_window(B: Iterable[Sequence[int]]) -> tuple:
    """Sites of a window sorted in row-major order, as integer tuples."""
    sites = sorted({tuple(int(c) for c in z) for z in B})
    if not sites:
        raise ModelError("window must contain at least one site")
    d = len(sites[0])
    if any(len(z) != d for z in sites):
        raise ModelError("window sites have inconsistent dimension")
    return tuple(sites)


def encode_pattern(pattern: Sequence[int], n_atoms: int) -> int:
    code = 0
    for a in pattern:
        code = code * n_atoms + int(a)
    return code


def decode_pattern(code: int, n_atoms: int, size: int) -> tuple:
    out = []
    for _ in range(size):
        code, a = divmod(code, n_atoms)
        out.append(a)
    return tuple(reversed(out))


def pattern_at(env: EnvironmentField, x, B) -> tuple:
    """Atom indices of (t_x omega) restricted to B."""
    B = canonical_window(B)
    x = np.asarray(x, dtype=np.int64)
    return tuple(env.site_atom(x + np.asarray(z)) for z in B)


def environmental_trajectory(env: EnvironmentField, start, n: int, B, walk_seed: int = 0,
                             run_id: int = 0) -> np.ndarray:
    """Patterns of t_{X_k} omega on B for k = 0..n, shape (n + 1, |B|) of atom indices."""
    B = canonical_window(B)
    pk = pack(env)
    key = derive_key(as_u64(walk_seed), run_id)
    codes = _pattern_sequence(pk.dirs, pk.atom_cdf, pk.kern_cdf, pk.period, as_u64(env.seed),
                              as_u64(key), np.asarray(start, dtype=np.int64),
                              np.array(B, dtype=np.int64), pk.n_atoms, int(n))
    return np.array([decode_pattern(int(c), pk.n_atoms, len(B)) for c in codes], dtype=np.int64)


@dataclass(frozen=True)
class KilledTrajectory:
    path: np.ndarray
    delta: float
    tau: int


def killed_run(env: EnvironmentField, delta: float, start=None, walk_seed: int = 0,
               run_id: int = 0) -> KilledTrajectory:
    """Run for tau steps with P(tau = k) = delta^k (1 - delta), tau independent of the walk."""
    if not 0 < delta < 1:
        raise ModelError("delta must lie in (0, 1)")
    start = np.zeros(env.dimension, dtype=np.int64) if start is None else np.asarray(start, np.int64)
    key = derive_key(as_u64(walk_seed), run_id)
    tau = int(_geometric_tau(as_u64(key), float(delta)))
    pk = pack(env)
    p = _path(pk.dirs, pk.atom_cdf, pk.kern_cdf, pk.period, as_u64(env.seed), as_u64(key),
              start, 0, tau)
    return KilledTrajectory(p, float(delta), tau)
