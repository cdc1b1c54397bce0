"""Minimizers for the fidelity energy and the binary Ising cell energy.

``minimize_weak_membrane`` alternates between the auxiliary activation
variables (exact, closed form) and the field (a sparse SPD system solved by
preconditioned conjugate gradients), inside a graduated schedule of caps.

``min_cut_binary`` minimizes the Ising energy over binary fields with fixed
boundary values.  Both built-in potentials are submodular: ``pairwise_sum``
gives ordinary pairwise cut terms and ``capped_sum`` gives one "not all equal"
clique per site, which is representable with two auxiliary nodes.  The
minimum is therefore exact for both; custom potentials fall back to ICM.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .energy import (BoundaryClass, EnergyParams, LatticeField, Region, collar_mask,
                     energy_F_g, energy_I, site_mask)
from .geometry import EdgeSet
from .potential import PotentialSpec, beta_limit, eval_sites


class ConvergenceError(RuntimeError):
    pass


@dataclass
class SolveConfig:
    max_sweeps: int = 50
    tol: float = 1e-10
    restarts: int = 1
    gnc_schedule: Sequence[float] = (1.0,)
    cg_tol: float = 1e-12
    cg_max_iter: int = 5000
    seed: int = 0

    def __post_init__(self):
        sched = [float(s) for s in self.gnc_schedule]
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not sched or sched[-1] != 1.0 or any(a <= b for a, b in zip(sched, sched[1:])):
            raise ValueError("GNC schedule must decrease strictly and end at 1")
        if self.restarts < 1 or self.max_sweeps < 1:
            raise ValueError("restarts and max_sweeps must be positive")
        self.gnc_schedule = tuple(sched)


@dataclass
class SegmentationResult:
    u: LatticeField
    energy: float
    energy_trace: list
    active_edges: np.ndarray
    converged: bool
    meta: dict = field(default_factory=dict)


# --- conjugate gradients ----------------------------------------------------------------

def pcg(A: csr_matrix, b: np.ndarray, x0: Optional[np.ndarray] = None, tol: float = 1e-12,
        max_iter: int = 5000) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned CG for every column of ``b`` at once.

    Stops when ``||r|| <= tol * ||b||`` column-wise; raises
    :class:`ConvergenceError` with the residual otherwise.
    """
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(B.shape)
    dinv = 1.0 / A.diagonal()
    Rm = B - A @ X
    bnorm = np.linalg.norm(B, axis=0)
    target = tol * np.where(bnorm > 0, bnorm, 1.0)
    Z = dinv[:, None] * Rm
    P = Z.copy()
    rz = np.einsum("ij,ij->j", Rm, Z)
    it = 0
    res = np.linalg.norm(Rm, axis=0)
    while np.any(res > target):
        if it >= max_iter:
            raise ConvergenceError(f"CG stopped after {it} iterations, residual {res.max():.3e}")
        AP = A @ P
        pap = np.einsum("ij,ij->j", P, AP)
        a = np.divide(rz, pap, out=np.zeros_like(rz), where=pap > 0)
        X += a * P
        Rm -= a * AP
        Z = dinv[:, None] * Rm
        rz_new = np.einsum("ij,ij->j", Rm, Z)
        beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=rz > 0)
        P = Z + beta * P
        rz = rz_new
        res = np.linalg.norm(Rm, axis=0)
        it += 1
    return (X[:, 0] if vec else X), it, float(res.max() / max(bnorm.max(), 1e-300))


def weighted_laplacian(n: int, src: np.ndarray, dst: np.ndarray, w: np.ndarray) -> csr_matrix:
    rows = np.r_[src, dst, src, dst]
    cols = np.r_[dst, src, src, dst]
    vals = np.r_[-w, -w, w, w]
    return coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


# --- weak membrane ----------------------------------------------------------------------

class _Problem:
    """Sites and edges inside ``A`` with the scalars of the quadratic inner problem."""

    def __init__(self, edges: EdgeSet, params: EnergyParams, g: LatticeField):
        if params.p != 2 or params.q != 2:
            raise ValueError("the weak-membrane solver needs p = q = 2")
        if params.potential.variant not in ("pairwise_sum", "capped_sum"):
            raise ValueError("the weak-membrane solver supports pairwise_sum and capped_sum")
        if not params.fidelity_weight > 0:
            raise ValueError("the weak-membrane solver needs a positive fidelity weight")
        if edges.n_points != g.lattice.n:
            raise ValueError("edge set and data live on different lattices")
        self.edges, self.params, self.g = edges, params, g
        self.inside = site_mask(g, params)
        act = self.inside[edges.src] & self.inside[edges.dst]
        self.edge_ids = np.flatnonzero(act)
        self.src = edges.src[act]
        self.dst = edges.dst[act]
        self.n = g.lattice.n
        eps = params.epsilon
        self.kappa = params.potential.alpha / eps ** 2  # gradient weight after dividing by eps^d
        self.scale = eps ** g.lattice.d

    def sq_jumps(self, u: np.ndarray) -> np.ndarray:
        return np.sum((u[self.src] - u[self.dst]) ** 2, axis=1)

    def activation(self, u: np.ndarray, cap: float) -> np.ndarray:
        """Per-edge 0/1 weights minimizing the joint energy for fixed ``u`` (ties keep the edge)."""
        pot = self.params.potential
        val = pot.alpha * self.sq_jumps(u) / self.params.epsilon
        if pot.variant == "pairwise_sum":
            return (val <= cap).astype(float)
        site = np.bincount(self.src, val, minlength=self.n)
        return (site <= cap).astype(float)[self.src]

    def solve_u(self, z: np.ndarray, u0: np.ndarray, cfg: SolveConfig) -> np.ndarray:
        w = self.params.fidelity_weight
        L = weighted_laplacian(self.n, self.src, self.dst, z)
        A = (self.kappa * L + w * diags(self.inside.astype(float))).tocsr()
        u = self.g.values.copy()
        idx = np.flatnonzero(self.inside)
        A = A[idx][:, idx]
        x, _, _ = pcg(A, w * self.g.values[idx], u0[idx], cfg.cg_tol, cfg.cg_max_iter)
        u[idx] = x
        return u

    def objective(self, u: np.ndarray, cap: float) -> float:
        """``F_{eps,g}`` with the potential cap replaced by ``cap``."""
        eps = self.params.epsilon
        pot = self.params.potential
        spec = PotentialSpec(pot.variant, pot.alpha, cap, pot.M)
        f = eval_sites(spec, self.sq_jumps(u) / eps, self.src, self.n)
        fid = np.sum((u - self.g.values) ** 2, axis=1)
        w = self.params.fidelity_weight
        d = self.g.lattice.d
        return eps ** (d - 1) * math.fsum(f[self.inside]) + w * eps ** d * math.fsum(fid[self.inside])


def _descend(prob: _Problem, u: np.ndarray, cfg: SolveConfig, trace: list, sweep: int):
    """Run the GNC stages from ``u``, appending accepted sweeps to ``trace``."""
    cap0 = prob.params.potential.cap
    converged = False
    for mult in cfg.gnc_schedule:
        cap = cap0 * mult
        e_old = prob.objective(u, cap)
        converged = False
        for _ in range(cfg.max_sweeps):
            u_new = prob.solve_u(prob.activation(u, cap), u, cfg)
            e_new = prob.objective(u_new, cap)
            if not e_new < e_old:
                converged = True
                break
            sweep += 1
            trace.append((sweep, e_new))
            rel = (e_old - e_new) / max(abs(e_old), 1e-300)
            u, e_old = u_new, e_new
            if rel < cfg.tol:
                converged = True
                break
    return u, sweep, converged


def minimize_weak_membrane(edges: EdgeSet, params: EnergyParams, g: LatticeField,
                           config: Optional[SolveConfig] = None) -> SegmentationResult:
    """Local minimizer of ``F_{eps,g}`` for ``p = q = 2``; best of ``config.restarts`` runs.

    Restart 0 starts from ``u = g``; the others start from random activation
    patterns.  The trace of the returned run lists the stage objective after
    every accepted sweep; caps only decrease along the schedule, so the trace
    never increases and its last entry is the true energy.
    """
    cfg = config or SolveConfig()
    prob = _Problem(edges, params, g)
    rng = np.random.default_rng(cfg.seed)
    best = None
    energies = []
    for k in range(cfg.restarts):
        u = g.values.copy()
        if k > 0:
            # random activation pattern, then one exact field solve
            if params.potential.variant == "capped_sum":
                z0 = (rng.random(prob.n) < rng.random()).astype(float)[prob.src]
            else:
                z0 = (rng.random(len(prob.src)) < rng.random()).astype(float)
            u = prob.solve_u(z0, u, cfg)
        trace = [(0, prob.objective(u, params.potential.cap * cfg.gnc_schedule[0]))]
        u, _, conv = _descend(prob, u, cfg, trace, 0)
        e = prob.objective(u, params.potential.cap)
        if trace[-1][1] != e:
            trace.append((trace[-1][0] + 1, e))
        energies.append(e)
        if best is None or e < best[1]:
            best = (u, e, trace, conv, k)
    u, e, trace, conv, k = best
    field_u = g.with_values(u)
    active = np.zeros(len(edges), dtype=bool)
    active[prob.edge_ids] = prob.activation(u, params.potential.cap) > 0
    check = energy_F_g(field_u, edges, params, g)
    if abs(check - e) > 1e-9 * max(1.0, abs(check)):
        raise RuntimeError(f"energy bookkeeping mismatch: {e} vs {check}")
    return SegmentationResult(field_u, check, trace, active, conv,
                              {"restart_energies": energies, "best_restart": k})


# --- exhaustive oracles --------------------------------------------------------------------

def _vector_energy(U: np.ndarray, prob_src, prob_dst, inside, params: EnergyParams, g: np.ndarray, n: int):
    """Energies of a batch of fields ``U`` with shape ``(C, N, m)``."""
    eps, pot = params.epsilon, params.potential
    d_edge = np.linalg.norm(U[:, prob_src] - U[:, prob_dst], axis=2)
    entries = eps * (d_edge / eps) ** params.p
    inc = np.zeros((len(prob_src), n))
    inc[np.arange(len(prob_src)), prob_src] = 1.0
    if pot.variant == "pairwise_sum":
        f = np.minimum(pot.alpha * entries, pot.cap) @ inc
    else:
        f = np.minimum(pot.alpha * (entries @ inc), pot.cap)
    fid = np.linalg.norm(U - g[None], axis=2) ** params.q
    return f[:, inside].sum(axis=1), fid[:, inside].sum(axis=1)


def brute_force_min(edges: EdgeSet, params: EnergyParams, g: LatticeField, value_grid,
                    chunk: int = 20000) -> tuple[LatticeField, float]:
    """Exact minimum of ``F_{eps,g}`` over fields with every value in ``value_grid``.

    ``value_grid`` holds scalars (``m = 1``) or rows of length ``m``.
    """
    grid = np.asarray(value_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.shape[1] != g.m:
        raise ValueError("grid values have the wrong dimension")
    n, K = g.lattice.n, len(grid)
    if K ** n > 10 ** 7:
        raise ValueError(f"search space {K}^{n} exceeds 1e7")
    if params.potential.variant == "custom" and not params.potential.usable:
        raise ValueError("custom potential has not passed the axiom checks")
    inside = site_mask(g, params)
    act = inside[edges.src] & inside[edges.dst]
    src, dst = edges.src[act], edges.dst[act]
    d = g.lattice.d
    eps = params.epsilon
    best_e, best_code = np.inf, 0
    total = K ** n
    powers = K ** np.arange(n)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk))
        digits = (codes[:, None] // powers) % K
        U = grid[digits]
        if params.potential.variant == "custom":
            es = np.array([energy_F_g(g.with_values(Ui), edges, params, g) for Ui in U])
        else:
            f, fid = _vector_energy(U, src, dst, inside, params, g.values, n)
            es = eps ** (d - 1) * f + params.fidelity_weight * eps ** d * fid
        k = int(np.argmin(es))
        if es[k] < best_e:
            best_e, best_code = float(es[k]), int(codes[k])
    digits = (best_code // powers) % K
    u = g.with_values(grid[digits])
    return u, energy_F_g(u, edges, params, g)


# --- binary Ising minimization ---------------------------------------------------------------

def _ising_terms(edges: EdgeSet, params: EnergyParams, inside: np.ndarray):
    act = inside[edges.src] & inside[edges.dst]
    return edges.src[act], edges.dst[act]


def _cut_graph(n: int, free: np.ndarray, fixed_val: np.ndarray, src: np.ndarray, dst: np.ndarray,
               variant: str):
    """Unit-weight s-t graph; labels: source side = 0, sink side = 1.

    Returns the csr capacity matrix, source and sink ids, and the constant
    offset (in units of one term weight).
    """
    tails, heads, caps = [], [], []
    offset = 0
    n_nodes = n + 2
    s, t = n, n + 1
    if variant == "pairwise_sum":
        tails += [src, dst]
        heads += [dst, src]
        caps += [np.ones(len(src), np.int64)] * 2
    else:
        order = np.argsort(src, kind="stable")
        srt, dst_s = src[order], dst[order]
        owners, starts = np.unique(srt, return_index=True)
        ends = np.r_[starts[1:], len(srt)]
        n_cl = len(owners)
        zs = n + 2 + np.arange(n_cl)
        ws = n + 2 + n_cl + np.arange(n_cl)
        n_nodes += 2 * n_cl
        members = [np.r_[o, dst_s[a:b]] for o, a, b in zip(owners, starts, ends)]
        sizes = np.array([len(mm) for mm in members])
        allm = np.concatenate(members) if members else np.empty(0, int)
        zrep = np.repeat(zs, sizes)
        wrep = np.repeat(ws, sizes)
        tails += [np.full(n_cl, s), ws, zrep, allm]
        heads += [zs, np.full(n_cl, t), allm, wrep]
        caps += [np.ones(n_cl, np.int64), np.ones(n_cl, np.int64),
                 np.full(len(allm), -1, np.int64), np.full(len(allm), -1, np.int64)]
        offset = -n_cl
    total = sum(int(c[c > 0].sum()) for c in caps)
    inf = total + 1
    caps = [np.where(c < 0, inf, c) for c in caps]
    fixed = np.flatnonzero(~free)
    one = fixed[fixed_val[fixed] == 1]
    zero = fixed[fixed_val[fixed] == 0]
    tails += [np.full(len(zero), s), one]
    heads += [zero, np.full(len(one), t)]
    caps += [np.full(len(zero), inf, np.int64), np.full(len(one), inf, np.int64)]
    tl, hd, cp = np.concatenate(tails), np.concatenate(heads), np.concatenate(caps)
    graph = coo_matrix((cp, (tl, hd)), shape=(n_nodes, n_nodes)).tocsr()
    graph.sum_duplicates()
    return graph.astype(np.int32), s, t, offset, inf


def _min_cut_labels(graph: csr_matrix, s: int, t: int, n: int) -> tuple[np.ndarray, int]:
    res = maximum_flow(graph, s, t, method="dinic")
    flow = res.flow.tocsr()
    cap = graph.astype(np.int64)
    resid = (cap - flow).tocsr()
    resid.data[resid.data < 0] = 0
    resid.eliminate_zeros()
    reach = breadth_first_order(resid, s, directed=True, return_predecessors=False)
    labels = np.ones(n, dtype=np.int8)
    reach = reach[reach < n]
    labels[reach] = 0
    return labels, int(res.flow_value)


@dataclass
class BinaryResult:
    v: LatticeField
    value: float
    exact: bool
    meta: dict = field(default_factory=dict)


def _icm(n, free, fixed_val, src, dst, spec: PotentialSpec, restarts, seed):
    """Iterated conditional modes on ``sum_x beta(l_x, k_x)``; best of ``restarts``."""
    rng = np.random.default_rng(seed)
    nbrs = [[] for _ in range(n)]
    for a, b in zip(src, dst):
        nbrs[a].append(b)
    owners_of = [[] for _ in range(n)]
    for a, b in zip(src, dst):
        owners_of[b].append(a)

    def site_cost(x, lab):
        out = nbrs[x]
        if not out:
            return 0.0
        dis = sum(lab[y] != lab[x] for y in out)
        return beta_limit(spec, int(dis), len(out))

    def local(i, lab):
        return site_cost(i, lab) + sum(site_cost(a, lab) for a in set(owners_of[i]))

    best = None
    free_ids = np.flatnonzero(free)
    for k in range(restarts):
        lab = fixed_val.copy()
        lab[free_ids] = rng.integers(0, 2, len(free_ids)) if k else fixed_val[free_ids]
        changed = True
        while changed:
            changed = False
            for i in rng.permutation(free_ids):
                c0 = local(i, lab)
                lab[i] ^= 1
                if local(i, lab) < c0:
                    changed = True
                else:
                    lab[i] ^= 1
        e = sum(site_cost(x, lab) for x in range(n))
        if best is None or e < best[1]:
            best = (lab.copy(), e)
    return best


def min_cut_binary(edges: EdgeSet, params: EnergyParams, boundary: BoundaryClass,
                   region: Region, lattice_field: LatticeField, icm_restarts: int = 20,
                   seed: int = 0) -> BinaryResult:
    """Minimize ``I_eps`` over ``{+-e1}``-valued fields fixed to ``ubar`` on the collar.

    ``lattice_field`` only supplies the lattice, scale and value dimension.
    Pairwise and capped potentials are solved exactly by a minimum s-t cut;
    custom potentials get an ICM upper bound (``exact=False``).
    """
    u0 = lattice_field
    n = u0.lattice.n
    params = EnergyParams(params.epsilon, params.p, params.q, params.potential,
                          params.fidelity_weight, region)
    inside = region.contains(u0.sites)
    collar = collar_mask(u0, region, boundary.delta)
    ub = np.asarray(boundary.ubar(u0.sites), dtype=float).reshape(n, -1)
    e1 = np.zeros(u0.m)
    e1[0] = 1.0
    if ub.shape[1] != u0.m or not np.all(np.all(ub == e1, axis=1) | np.all(ub == -e1, axis=1)):
        raise ValueError("boundary data must take values in {e1, -e1}")
    fixed_val = (ub[:, 0] > 0).astype(np.int8)
    free = inside & ~collar
    src, dst = _ising_terms(edges, params, inside)
    variant = params.potential.variant
    weight = params.epsilon ** (u0.lattice.d - 1) * params.potential.cap
    if variant in ("pairwise_sum", "capped_sum"):
        graph, s, t, offset, _ = _cut_graph(n, free, fixed_val, src, dst, variant)
        labels, flow = _min_cut_labels(graph, s, t, n)
        labels[~free] = fixed_val[~free]
        exact = True
        meta = {"flow_units": flow + offset}
    else:
        labels, _ = _icm(n, free, fixed_val, src, dst, params.potential, icm_restarts, seed)
        exact = False
        meta = {"icm_restarts": icm_restarts}
    vals = np.where(labels[:, None] == 1, e1, -e1)
    v = u0.with_values(vals)
    value = energy_I(v, edges, params)
    if exact and abs(value - weight * meta["flow_units"]) > 1e-9 * max(1.0, value):
        raise RuntimeError("cut value disagrees with the recomputed Ising energy")
    meta["n_free"] = int(free.sum())
    return BinaryResult(v, value, exact, meta)
