"""Potentials on finite multisets of non-negative reals.

A multiset is represented by any 1-d array of its entries; order never
matters.  Two built-in potentials are provided:

``pairwise_sum``
    ``f(p) = sum_v min(alpha v, cap)``
``capped_sum``
    ``f(p) = min(alpha ||p||_1, cap)``

plus a ``custom`` variant wrapping a user callable, which must pass
:func:`verify_potential_axioms` before energies accept it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

VARIANTS = ("pairwise_sum", "capped_sum", "custom")


@dataclass(frozen=True)
class PotentialSpec:
    variant: str = "capped_sum"
    alpha: float = 1.0
    cap: float = 1.0
    M: Optional[int] = None
    func: Optional[Callable[[np.ndarray], float]] = field(default=None, compare=False)
    verified: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown potential variant {self.variant!r}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be positive and finite")
        if not (math.isfinite(self.cap) and self.cap >= 0):
            raise ValueError("cap must be non-negative and finite")
        if self.M is not None and self.M < 1:
            raise ValueError("M must be a positive integer")
        if self.variant == "custom" and self.func is None:
            raise ValueError("custom potentials need a callable")

    @classmethod
    def custom(cls, func, alpha: float, cap: float, M: Optional[int] = None,
               trials: int = 1000, seed: int = 0) -> "PotentialSpec":
        """Wrap ``func`` after checking the structural axioms; raises if any fails."""
        spec = cls("custom", alpha, cap, M, func)
        report = verify_potential_axioms(spec, trials, seed)
        if not report.passed:
            raise ValueError(f"custom potential rejected: {report.failures[0]}")
        return cls("custom", alpha, cap, M, func, verified=True)

    @property
    def usable(self) -> bool:
        return self.variant != "custom" or self.verified

    def to_dict(self) -> dict:
        out = {"variant": self.variant, "alpha": self.alpha, "cap": self.cap}
        if self.M is not None:
            out["M"] = self.M
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PotentialSpec":
        return cls(data.get("variant", "capped_sum"), float(data.get("alpha", 1.0)),
                   float(data.get("cap", 1.0)), data.get("M"))


def _as_multiset(spec: PotentialSpec, p) -> np.ndarray:
    v = np.asarray(p, dtype=float).ravel()
    if np.any(np.isnan(v)) or np.any(v < 0):
        raise ValueError("multiset entries must be non-negative")
    if spec.M is not None and v.size > spec.M:
        raise ValueError(f"multiset has {v.size} entries, more than M={spec.M}")
    return v


def eval_potential(spec: PotentialSpec, p) -> float:
    v = _as_multiset(spec, p)
    if spec.variant == "pairwise_sum":
        return float(math.fsum(np.minimum(spec.alpha * v, spec.cap)))
    if spec.variant == "capped_sum":
        return float(min(spec.alpha * math.fsum(v), spec.cap)) if v.size else 0.0
    return float(spec.func(v)) if v.size else 0.0


def eval_sites(spec: PotentialSpec, entries: np.ndarray, owner: np.ndarray, n_sites: int) -> np.ndarray:
    """``f`` of every site's multiset, given entries tagged with their owning site."""
    entries = np.asarray(entries, dtype=float)
    if entries.size and (np.any(np.isnan(entries)) or entries.min() < 0):
        raise ValueError("multiset entries must be non-negative")
    if spec.M is not None and entries.size:
        if np.bincount(owner, minlength=n_sites).max() > spec.M:
            raise ValueError(f"a site multiset exceeds M={spec.M}")
    if spec.variant == "pairwise_sum":
        return np.bincount(owner, np.minimum(spec.alpha * entries, spec.cap), minlength=n_sites)
    if spec.variant == "capped_sum":
        return np.minimum(spec.alpha * np.bincount(owner, entries, minlength=n_sites), spec.cap)
    out = np.zeros(n_sites)
    order = np.argsort(owner, kind="stable")
    bounds = np.searchsorted(owner[order], np.arange(n_sites + 1))
    for s in range(n_sites):
        if bounds[s + 1] > bounds[s]:
            out[s] = spec.func(entries[order[bounds[s]:bounds[s + 1]]])
    return out


def beta_limit(spec: PotentialSpec, l: int, k: int) -> float:
    """Limit of ``f`` on ``l`` entries tending to infinity and ``k - l`` zeros."""
    if l < 0 or k < 0:
        raise ValueError("l and k must be non-negative")
    if l > k:
        raise ValueError("l cannot exceed k")
    if spec.M is not None and k > spec.M:
        raise ValueError("k exceeds M")
    if l == 0:
        return 0.0
    if spec.variant == "pairwise_sum":
        return l * spec.cap
    if spec.variant == "capped_sum":
        return spec.cap
    return eval_potential(spec, np.r_[np.full(l, 1e12), np.zeros(k - l)])


def beta_table(spec: PotentialSpec, l: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Vectorized :func:`beta_limit`."""
    l = np.asarray(l)
    k = np.asarray(k)
    if np.any(l > k):
        raise ValueError("l cannot exceed k")
    if spec.variant == "pairwise_sum":
        return l * spec.cap
    if spec.variant == "capped_sum":
        return np.where(l > 0, spec.cap, 0.0)
    return np.array([beta_limit(spec, int(a), int(b)) for a, b in zip(l.ravel(), k.ravel())]).reshape(l.shape)


def sandwich_constants(spec: PotentialSpec, size: int) -> tuple[float, float]:
    """One valid pair ``c_f <= C_f`` for multisets with at most ``size`` entries.

    Custom potentials get ``(nan, nan)``; their constants are estimated from samples.
    """
    if spec.variant == "custom":
        return math.nan, math.nan
    c = min(spec.alpha, spec.cap)
    if spec.variant == "pairwise_sum":
        C = max(spec.alpha, size * spec.cap)
    else:
        C = max(spec.alpha, spec.cap)
    return c, C


@dataclass
class AxiomReport:
    passed: bool
    failures: list
    c_f: float
    C_f: float
    slack: dict

    def to_dict(self) -> dict:
        return {"passed": self.passed, "failures": self.failures, "c_f": self.c_f,
                "C_f": self.C_f, "slack": self.slack}


def _random_multiset(rng: np.random.Generator, size: int) -> np.ndarray:
    scale = 10.0 ** rng.uniform(-6, 3, size=size)
    v = rng.exponential(1.0, size=size) * scale
    v[rng.random(size) < 0.1] = 0.0
    return v


def _estimate_constants(spec, rng, size, trials):
    ratios = []
    for _ in range(trials):
        v = _random_multiset(rng, int(rng.integers(1, size + 1)))
        n1 = math.fsum(v)
        if n1 > 0:
            ratios.append(eval_potential(spec, v) / min(n1, 1.0))
    ratios = np.array(ratios)
    return float(ratios.min()), float(ratios.max())


def verify_potential_axioms(spec: PotentialSpec, trials: int = 1000, seed: int = 0,
                            slope_t: float = 1e-8, slope_tol: float = 1e-6) -> AxiomReport:
    """Randomized audit of monotonicity, the two-sided bound, the slope at zero and β.

    Every check on the built-in variants is exact (no tolerance) except the
    slope test, which compares ``f(t p) / ||t p||_1`` with ``alpha`` at
    ``t = slope_t``.  For custom callables the two-sided bound constants are
    estimated from the samples and only required to be positive and finite.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(seed)
    size = spec.M if spec.M is not None else 16
    c_f, C_f = sandwich_constants(spec, size)
    custom = spec.variant == "custom"
    if custom:
        c_f, C_f = _estimate_constants(spec, rng, size, trials)
    failures = []
    slack = {"monotone": np.inf, "lower": np.inf, "upper": np.inf, "slope": 0.0, "beta": 0.0}

    def fail(axiom, witness, detail):
        if len(failures) < 20:
            failures.append({"axiom": axiom, "witness": np.asarray(witness).tolist(), "detail": detail})

    if not c_f > 0:
        fail("sandwich", [], f"lower constant c_f={c_f} is not positive")
    if not math.isfinite(C_f):
        fail("sandwich", [], f"upper constant C_f={C_f} is not finite")
    for _ in range(trials):
        k = int(rng.integers(1, size + 1))
        v = _random_multiset(rng, k)
        w = v + _random_multiset(rng, k) * (rng.random(k) < 0.7)
        fv, fw = eval_potential(spec, v), eval_potential(spec, w)
        slack["monotone"] = min(slack["monotone"], fw - fv)
        if fv > fw:
            fail("monotone", [v, w], f"f(v)={fv} > f(v')={fw}")
        fp = eval_potential(spec, rng.permutation(v))
        if fp != fv and not (custom and abs(fp - fv) <= 1e-12 * max(abs(fv), 1e-300)):
            fail("permutation", v, "value depends on entry order")
        n1 = math.fsum(v)
        if not custom:
            lo, hi = c_f * min(n1, 1.0), C_f * min(n1, 1.0)
            slack["lower"] = min(slack["lower"], fv - lo)
            slack["upper"] = min(slack["upper"], hi - fv)
            if fv < lo:
                fail("sandwich", v, f"f={fv} below c_f min(|p|,1)={lo}")
            if fv > hi:
                fail("sandwich", v, f"f={fv} above C_f min(|p|,1)={hi}")
        p = slope_t * v / max(n1, 1e-300)
        ratio = eval_potential(spec, p) / math.fsum(p) if math.fsum(p) > 0 else spec.alpha
        err = abs(ratio - spec.alpha)
        slack["slope"] = max(slack["slope"], err)
        if err >= slope_tol:
            fail("slope", p, f"f(p)/|p|_1={ratio} differs from alpha={spec.alpha}")
        l = int(rng.integers(0, k + 1))
        exact = beta_limit(spec, l, k)
        approx = eval_potential(spec, np.r_[np.full(l, 1e12), np.zeros(k - l)])
        slack["beta"] = max(slack["beta"], abs(exact - approx))
        if abs(exact - approx) > 1e-12:
            fail("beta", [l, k], f"beta={exact} but f at N=1e12 is {approx}")
        if l > 0 and not exact > 0:
            fail("beta", [l, k], "beta(l,k) must be positive for l >= 1")
    unit = eval_potential(spec, [slope_t]) / slope_t
    if abs(unit - spec.alpha) >= slope_tol:
        fail("slope", [slope_t], f"f(t{{1}})/t={unit} differs from alpha={spec.alpha}")
    slack["slope"] = max(slack["slope"], abs(unit - spec.alpha))
    return AxiomReport(not failures, failures, c_f, C_f, slack)
