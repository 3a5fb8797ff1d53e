"""Transmit beamformer design: criteria, power allocation and assembly.

Multiplier units
----------------
The waterfilling rule used here is

    P_km = ( sqrt(σn²·B_m / (σs²·λ·H_km)) − σn²/(σs²·H_km) )⁺

with ``B_m = ∂f_m/∂Ê_mm``. In these units ``λ`` is the Lagrange multiplier
of the power constraint scaled by ``N_c/σs²``; :class:`DualState` reports
both. All SINR-type quantities use MSEs normalised by σs².
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.special import erfc

from . import kernels
from .channel import ChannelSvd, SystemConfig, make_rng
from .equalizer import BeamformerSet, StreamMse
from .errors import ConfigError, ConvergenceError, ZeroSinrError

LN2 = math.log(2.0)


class CriterionKind(str, enum.Enum):
    AMSE = "AMSE"
    GMSE = "GMSE"
    MAXMSE = "maxMSE"
    ASINR = "ASINR"
    GSINR = "GSINR"
    HSINR = "HSINR"
    ABER = "ABER"


class SchurClass(str, enum.Enum):
    CONVEX = "convex"
    CONCAVE = "concave"


_SCHUR = {
    CriterionKind.AMSE: SchurClass.CONCAVE,
    CriterionKind.GMSE: SchurClass.CONCAVE,
    CriterionKind.ASINR: SchurClass.CONCAVE,
    CriterionKind.GSINR: SchurClass.CONCAVE,
    CriterionKind.MAXMSE: SchurClass.CONVEX,
    CriterionKind.HSINR: SchurClass.CONVEX,
    CriterionKind.ABER: SchurClass.CONVEX,
}

# power allocation problem actually solved for each criterion
_KERNEL_KIND = {
    CriterionKind.AMSE: kernels.AMSE,
    CriterionKind.MAXMSE: kernels.AMSE,
    CriterionKind.HSINR: kernels.AMSE,
    CriterionKind.ABER: kernels.AMSE,
    CriterionKind.GMSE: kernels.GMSE,
    CriterionKind.ASINR: kernels.ASINR,
    CriterionKind.GSINR: kernels.GSINR,
}


@dataclass(frozen=True)
class Criterion:
    """Design criterion; ``ber_alpha``/``ber_beta`` only matter for ABER.

    The ABER defaults describe Gray-mapped QPSK, whose per-bit error rate
    is ``Q(sqrt(SINR))``.
    """

    kind: CriterionKind
    ber_alpha: float = 1.0
    ber_beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", _parse_kind(self.kind))
        if not (self.ber_alpha > 0 and self.ber_beta > 0):
            raise ConfigError("ber_alpha and ber_beta must be > 0")

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        return cls(_parse_kind(text))

    @property
    def name(self) -> str:
        return self.kind.value

    def __str__(self):
        return self.name


def _parse_kind(value) -> CriterionKind:
    if isinstance(value, CriterionKind):
        return value
    key = str(value).strip().lower()
    for k in CriterionKind:
        if k.value.lower() == key:
            return k
    raise ConfigError(f"unknown criterion {value!r}; expected one of "
                      f"{[k.value for k in CriterionKind]}")


ALL_CRITERIA = tuple(Criterion(k) for k in CriterionKind)


@dataclass(frozen=True)
class PowerAllocation:
    """Non-negative ``(N_c, M)`` matrix of powers ``P_km``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 2:
            raise ConfigError(f"allocation must be (N_c, M), got shape {p.shape}")
        if np.any(p < 0) or np.any(np.isnan(p)):
            raise ConfigError("allocation entries must be non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def total(self) -> float:
        return float(np.sum(self.p))


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs for :func:`solve_dual`.

    ``step_rule="adaptive"`` scales each subgradient step by the inverse of the
    observed slope of the total power in ``λ`` and divides it by one plus the
    number of sign changes of the constraint gap so far. ``"harmonic"`` uses
    the plain ``step0·ε_ref / i`` schedule with ``ε_ref = 2λ⁰/P_T``.
    """

    step0: float = 1.0
    max_outer_iters: int = 500
    max_inner_iters: int = 200
    power_tol: float = 1e-10
    fixedpoint_tol: float = 1e-12
    damping: float = 0.5
    step_rule: str = "adaptive"
    stationarity_tol: float = 1e-7

    def __post_init__(self):
        for name in ("step0", "max_outer_iters", "max_inner_iters", "power_tol",
                     "fixedpoint_tol", "stationarity_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be > 0")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping: must lie in (0, 1]")
        if self.step_rule not in ("adaptive", "harmonic"):
            raise ConfigError(f"step_rule: unknown rule {self.step_rule!r}")


@dataclass(frozen=True)
class DualState:
    lam: float
    iteration: int
    step: float
    constraint_gap: float
    converged: bool = True
    multiplier: float = float("nan")
    scale: float = 1.0
    regime: str = "interior"


class DualResult(NamedTuple):
    allocation: PowerAllocation
    state: DualState
    trace: list


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def schur_class(c: Criterion) -> SchurClass:
    return _SCHUR[_parse_kind(c.kind if isinstance(c, Criterion) else c)]


def q_function(x):
    """Gaussian tail ``Q(x) = ½·erfc(x/√2)``."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def _normalized(mse) -> np.ndarray:
    if isinstance(mse, StreamMse):
        return np.asarray(mse.normalized, dtype=float)
    return np.asarray(mse, dtype=float)


def objective(c: Criterion, mse: Union[StreamMse, Sequence[float]]) -> float:
    """Evaluate the criterion on the σs²-normalised stream MSEs.

    A plain sequence is taken to be already normalised.

    Raises
    ------
    ZeroSinrError
        For GSINR and HSINR when some stream has normalised MSE 1.
    """
    e = _normalized(mse)
    if np.any(e <= 0) or np.any(e > 1 + 1e-12):
        raise ConfigError(f"normalised MSEs must lie in (0, 1], got {e}")
    kind = c.kind
    if kind is CriterionKind.AMSE:
        return float(np.sum(e))
    if kind is CriterionKind.GMSE:
        return float(np.prod(e))
    if kind is CriterionKind.MAXMSE:
        return float(np.max(e))
    sinr = np.maximum(1.0 / e - 1.0, 0.0)
    zero = np.flatnonzero(sinr == 0)
    if kind is CriterionKind.ASINR:
        return float(-np.sum(sinr))
    if kind is CriterionKind.ABER:
        return float(np.sum(c.ber_alpha * q_function(np.sqrt(c.ber_beta * sinr))))
    if zero.size:
        raise ZeroSinrError(f"{kind.value}: zero SINR on stream(s) {zero.tolist()}", zero)
    if kind is CriterionKind.GSINR:
        return float(-np.prod(sinr))
    return float(np.sum(1.0 / sinr))


def rotation_matrix(m: int, cls: Union[SchurClass, str]) -> np.ndarray:
    """``I_M`` for Schur-concave criteria, the unitary ``M``-point DFT otherwise."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    cls = SchurClass(cls)
    if cls is SchurClass.CONCAVE:
        return np.eye(m, dtype=np.complex128)
    idx = np.arange(m)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / m) / math.sqrt(m)


# ---------------------------------------------------------------------------
# power allocation problem
# ---------------------------------------------------------------------------

def _gains(gains) -> np.ndarray:
    if isinstance(gains, ChannelSvd):
        return np.asarray(gains.gains, dtype=float)
    g = np.asarray(gains, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    return g


def _alloc(p) -> np.ndarray:
    if isinstance(p, PowerAllocation):
        return p.p
    return np.asarray(p, dtype=float)


def _snr_gain(h: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    return (cfg.sigma_s2 / cfg.sigma_n2) * h


def stream_mse_from_allocation(p, gains, cfg: SystemConfig) -> np.ndarray:
    """Unnormalised ``Ê_mm = (σs²/N_c)·Σ_k Ψ_km⁻¹`` for a diagonal (structured) design."""
    h = _gains(gains)
    psi = 1.0 + _snr_gain(h, cfg) * _alloc(p)
    return cfg.sigma_s2 * np.mean(1.0 / psi, axis=0)


def _kernel_kind(c: Criterion) -> int:
    return _KERNEL_KIND[c.kind]


def power_objective(c: Criterion, p, gains, cfg: SystemConfig) -> float:
    """The reformulated objective ``f(P) = Σ_m f_m(P)``.

    Schur-convex criteria are represented by the AMSE objective, which
    yields the same allocation. GMSE and GSINR are in their logarithmic form.
    """
    mse = stream_mse_from_allocation(p, gains, cfg)
    e = mse / cfg.sigma_s2
    kind = _kernel_kind(c)
    if kind == kernels.AMSE:
        return float(np.sum(mse))
    if kind == kernels.GMSE:
        return float(np.sum(np.log2(mse)))
    if kind == kernels.ASINR:
        return float(-np.sum(1.0 / e - 1.0))
    sinr = 1.0 / e - 1.0
    if np.any(sinr <= 0):
        return math.inf
    return float(-np.sum(np.log2(sinr)))


def b_factor(c: Criterion, p, gains, cfg: SystemConfig) -> np.ndarray:
    """Stream factors ``B_m = ∂f_m/∂Ê_mm`` entering the waterfilling rule.

    AMSE gives 1, GMSE ``1/(ln2·Ê_mm)``, ASINR ``σs²/Ê_mm²`` and GSINR
    ``σs²/(ln2·Ê_mm²·SINR_m)``.

    Raises
    ------
    ZeroSinrError
        GSINR with a stream at zero SINR.
    """
    kind = _kernel_kind(c)
    mse = stream_mse_from_allocation(p, gains, cfg)
    if kind == kernels.AMSE:
        return np.ones_like(mse)
    if kind == kernels.GMSE:
        return 1.0 / (LN2 * mse)
    if kind == kernels.ASINR:
        return cfg.sigma_s2 / mse ** 2
    sinr = cfg.sigma_s2 / mse - 1.0
    zero = np.flatnonzero(sinr <= 0)
    if zero.size:
        raise ZeroSinrError(f"GSINR factor undefined: zero SINR on stream(s) {zero.tolist()}", zero)
    return cfg.sigma_s2 / (LN2 * mse ** 2 * sinr)


def power_gradient(c: Criterion, p, gains, cfg: SystemConfig) -> np.ndarray:
    """``∂f/∂P_km = B_m · ∂Ê_mm/∂P_km``."""
    h = _gains(gains)
    a = _snr_gain(h, cfg)
    psi = 1.0 + a * _alloc(p)
    d_mse = -cfg.sigma_s2 * a / psi ** 2 / h.shape[0]
    return b_factor(c, p, gains, cfg)[None, :] * d_mse


def amse_second_derivative(p, gains, cfg: SystemConfig) -> np.ndarray:
    """Diagonal Hessian of the AMSE objective, ``(2σs²/N_c)·Ψ⁻³·(σs²H/σn²)²``."""
    h = _gains(gains)
    a = _snr_gain(h, cfg)
    psi = 1.0 + a * _alloc(p)
    return 2.0 * cfg.sigma_s2 / h.shape[0] * psi ** -3 * a ** 2


def kkt_residual(c: Criterion, p, gains, cfg: SystemConfig, support_tol: float = 1e-12):
    """Relative KKT residual of ``min f(P) s.t. ΣP ≤ P_T, P ≥ 0``.

    The multiplier is estimated from the gradient on the support. Returns
    ``(residual, multiplier)`` where the residual is the worst of
    ``|∂f/∂P + λ|`` on the support and ``max(0, −(∂f/∂P + λ))`` off it,
    divided by ``λ``.
    """
    pa = _alloc(p)
    g = power_gradient(c, pa, gains, cfg)
    on = pa > support_tol * max(cfg.power_budget, pa.max(initial=0.0))
    if not on.any():
        return math.inf, math.nan
    lam = float(-np.mean(g[on]))
    r = g + lam
    worst = float(np.max(np.abs(r[on])))
    if (~on).any():
        worst = max(worst, float(max(0.0, -np.min(r[~on]))))
    return worst / abs(lam), lam


def waterfill(lam: float, b, gains, cfg: SystemConfig) -> PowerAllocation:
    """Closed-form allocation for a given multiplier and stream factors.

    Entries with zero gain receive zero power.
    """
    if not lam > 0:
        raise ConfigError("lambda must be > 0")
    b = np.broadcast_to(np.asarray(b, dtype=float), (_gains(gains).shape[1],))
    if np.any(b <= 0):
        raise ConfigError("stream factors must be > 0")
    a = _snr_gain(_gains(gains), cfg)
    return PowerAllocation(kernels.waterfill(lam, b, a))


def amse_level(a: np.ndarray, budget: float) -> float:
    """Exact multiplier at which AMSE waterfilling (``B = 1``) spends ``budget``."""
    a = np.asarray(a, dtype=float).ravel()
    a = a[a > 0]
    if a.size == 0:
        raise ConfigError("all gains are zero")
    order = np.argsort(1.0 / np.sqrt(a))
    thr = 1.0 / np.sqrt(a[order])
    inv_sqrt = np.cumsum(1.0 / np.sqrt(a[order]))
    inv = np.cumsum(1.0 / a[order])
    for n in range(1, a.size + 1):
        mu = (budget + inv[n - 1]) / inv_sqrt[n - 1]
        if n == a.size or mu <= thr[n]:
            return 1.0 / mu ** 2
    raise AssertionError("unreachable")  # pragma: no cover


def _stationarity(kind, lam, p, a, b, n_c):
    # inner problem residual in waterfilling units, per entry
    psi = 1.0 + a * p
    r = lam - b[None, :] * a / psi ** 2
    on = p > 0
    res = np.where(on, np.abs(r), np.maximum(0.0, -r)) / lam
    return float(res.max(initial=0.0))


def _inner(kind, lam, a, cfg, sc, b0):
    p, b, iters, status = kernels.inner_solve(kind, lam, a, cfg.sigma_s2, b0,
                                              sc.damping, sc.max_inner_iters,
                                              sc.fixedpoint_tol)
    return p, b, iters, status


def _initial_factors(c: Criterion, h: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    epa = np.full(h.shape, cfg.power_budget / h.size)
    return b_factor(c, epa, h, cfg)


def solve_inner(lam: float, c: Criterion, gains, cfg: SystemConfig,
                sc: SolverConfig = SolverConfig(), b0=None) -> PowerAllocation:
    """Minimise ``f(P) + λ·ΣP`` over ``P ≥ 0`` for a fixed multiplier.

    For AMSE this is one waterfilling pass. For GMSE/ASINR/GSINR the stream
    factors depend on ``P``, so the rule is iterated as a damped fixed point
    ``B ← (1−γ)B + γ·b(P(B))`` starting from the equal-power factors;
    streams that have not settled after ``max_inner_iters`` are finished by
    bisection on ``log B``. The result is certified by the stationarity
    residual of the inner problem.

    Raises
    ------
    ConvergenceError
        If a stream cannot be solved, the inner problem is unbounded
        (ASINR below its critical multiplier) or the certificate fails.
    """
    if not lam > 0:
        raise ConfigError("lambda must be > 0")
    h = _gains(gains)
    a = _snr_gain(h, cfg)
    kind = _kernel_kind(c)
    if b0 is None:
        b0 = np.ones(h.shape[1]) if kind == kernels.AMSE else _initial_factors(c, h, cfg)
    p, b, iters, status = _inner(kind, lam, a, cfg, sc, np.asarray(b0, dtype=float))
    if np.any(status == kernels.UNBOUNDED):
        raise ConvergenceError(
            f"inner problem unbounded at lambda={lam:.6g} for stream(s) "
            f"{np.flatnonzero(status == kernels.UNBOUNDED).tolist()}", residual=math.inf)
    if np.any(status == kernels.FAILED):
        raise ConvergenceError(f"stream factor iteration failed at lambda={lam:.6g}",
                               iterations=int(iters.max()))
    # certify with the factors recomputed at the returned allocation
    b_at_p = b_factor(c, p, h, cfg) if kind != kernels.AMSE else np.ones(h.shape[1])
    res = _stationarity(kind, lam, p, a, b_at_p, h.shape[0])
    if res > sc.stationarity_tol:
        raise ConvergenceError(f"stationarity residual {res:.3g} above tolerance",
                               residual=res, iterations=int(iters.max()))
    return PowerAllocation(p)


# ---------------------------------------------------------------------------
# dual ascent
# ---------------------------------------------------------------------------

@dataclass
class _Eval:
    lam: float
    p: np.ndarray
    total: float
    b: np.ndarray
    ok: bool


def _evaluate(kind, lam, a, cfg, sc, b0) -> _Eval:
    p, b, _, status = _inner(kind, lam, a, cfg, sc, b0)
    if np.any(status == kernels.UNBOUNDED):
        return _Eval(lam, p, math.inf, b0, True)
    ok = not np.any(status == kernels.FAILED)
    return _Eval(lam, p, float(np.sum(p)), b, ok)


def _asinr_completion(a, cfg, sc, b0):
    """Primal point when the budget exceeds what ``λ → λ_c⁺`` would spend.

    Returns ``None`` if the dual iteration can reach the budget, else the
    allocation and the critical multiplier.
    """
    crit = kernels.asinr_critical_lambda(a)
    lam_c = float(crit.max())
    if lam_c <= 0:
        return None
    top = crit >= lam_c * (1.0 - 1e-12)
    p = np.zeros_like(a)
    rest = ~top
    if rest.any():
        sub = a[:, rest]
        pr, _, _, status = kernels.inner_solve(kernels.ASINR, lam_c, sub, cfg.sigma_s2,
                                               b0[rest], sc.damping, sc.max_inner_iters,
                                               sc.fixedpoint_tol)
        if np.any(status >= kernels.UNBOUNDED):
            return None
        p[:, rest] = pr
    # smallest power at which every subcarrier of a top stream is active
    inv_sqrt = 1.0 / np.sqrt(a[:, top])
    mu_full = inv_sqrt.max(axis=0)
    t_full = np.sum(mu_full * inv_sqrt - 1.0 / a[:, top], axis=0)
    left = cfg.power_budget - p.sum() - t_full.sum()
    if left <= 0:
        return None
    t = t_full + left / top.sum()
    mu = (t + np.sum(1.0 / a[:, top], axis=0)) / np.sum(inv_sqrt, axis=0)
    p[:, top] = np.maximum(mu * inv_sqrt - 1.0 / a[:, top], 0.0)
    return p, lam_c


def solve_dual(c: Criterion, gains, cfg: SystemConfig,
               sc: SolverConfig = SolverConfig()) -> DualResult:
    """Power allocation by projected subgradient ascent on the dual.

    Each iteration solves the inner problem at ``λ`` and updates
    ``λ ← [λ + ε_i·(ΣP − P_T)]⁺`` (the dual function's derivative is the
    constraint gap). A running bracket ``[λ_lo, λ_hi]`` from the signs of
    past gaps replaces any step that would leave it by bisection.

    Schur-convex criteria reuse the AMSE allocation, whose multiplier is
    available in closed form. For ASINR, when the budget exceeds the power
    that the dual can reach before its inner problem turns unbounded, the
    optimum sits at the critical multiplier with the surplus loaded onto the
    stream(s) defining it.
    """
    h = _gains(gains)
    a = _snr_gain(h, cfg)
    budget = cfg.power_budget
    kind = _kernel_kind(c)
    to_true = cfg.sigma_s2 / h.shape[0]
    lam_amse = amse_level(a, budget)
    trace = []

    def record(i, lam, total, p, step):
        obj = power_objective(c, p, h, cfg) if np.isfinite(total) else math.nan
        trace.append({"iteration": i, "lambda": lam, "gap": total - budget,
                      "objective": obj, "step": step})

    def finish(p, lam, i, step, converged, regime):
        total = float(np.sum(p))
        scale = min(1.0, budget / total) if total > 0 else 1.0
        alloc = PowerAllocation(p * scale)
        state = DualState(lam=lam, iteration=i, step=step, constraint_gap=total - budget,
                          converged=converged, multiplier=lam * to_true, scale=scale,
                          regime=regime)
        return DualResult(alloc, state, trace)

    if kind == kernels.AMSE:
        p = kernels.waterfill(lam_amse, np.ones(h.shape[1]), a)
        record(0, lam_amse, float(p.sum()), p, 0.0)
        return finish(p, lam_amse, 0, 0.0, True, "closed-form")

    b0 = _initial_factors(c, h, cfg)
    lo, hi = 0.0, math.inf
    if kind == kernels.ASINR:
        done = _asinr_completion(a, cfg, sc, b0)
        if done is not None:
            p, lam_c = done
            record(0, lam_c, float(p.sum()), p, 0.0)
            return finish(p, lam_c, 0, 0.0, True, "affine")
        lo = float(kernels.asinr_critical_lambda(a).max())

    lam = lam_amse * float(np.mean(b0))
    if lam <= lo:
        lam = 2.0 * lo
    cur = _evaluate(kind, lam, a, cfg, sc, b0)
    if cur.ok and np.isfinite(cur.total):
        b0 = cur.b
    best: Optional[_Eval] = None
    prev: Optional[_Eval] = None
    flips = 0
    step = 0.0
    ref_step = 2.0 * lam / budget
    for i in range(1, sc.max_outer_iters + 1):
        gap = cur.total - budget
        record(i - 1, cur.lam, cur.total, cur.p, step)
        if cur.ok and np.isfinite(gap):
            if best is None or abs(gap) < abs(best.total - budget):
                best = cur
            if abs(gap) <= sc.power_tol * budget:
                return finish(cur.p, cur.lam, i - 1, step, True, "interior")
        if gap > 0:
            lo = max(lo, cur.lam)
        else:
            hi = min(hi, cur.lam)
        if prev is not None and np.isfinite(prev.total) and np.isfinite(gap) \
                and (prev.total - budget) * gap < 0:
            flips += 1

        if not np.isfinite(gap):
            new = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * cur.lam
            step = math.nan
        else:
            if sc.step_rule == "harmonic":
                step = sc.step0 * ref_step / i
            else:
                slope = None
                if prev is not None and np.isfinite(prev.total) and prev.lam != cur.lam:
                    s = (cur.total - prev.total) / (cur.lam - prev.lam)
                    if s < 0:
                        slope = s
                if slope is None:
                    slope = -max(cur.total, budget) / (2.0 * cur.lam)
                step = sc.step0 / (1 + flips) / abs(slope)
            new = max(cur.lam + step * gap, 0.0)
            if not (lo < new < hi):
                if np.isfinite(hi):
                    new = 0.5 * (lo + hi)
                else:
                    new = 2.0 * max(cur.lam, lo)
        prev = cur
        cur = _evaluate(kind, new, a, cfg, sc, b0)
        if cur.ok and np.isfinite(cur.total):
            b0 = cur.b

    gap = cur.total - budget
    if cur.ok and np.isfinite(gap) and (best is None or abs(gap) < abs(best.total - budget)):
        best = cur
    record(sc.max_outer_iters, cur.lam, cur.total, cur.p, step)
    if best is None:
        raise ConvergenceError("dual iteration never produced a finite allocation",
                               iterations=sc.max_outer_iters)
    converged = abs(best.total - budget) <= sc.power_tol * budget
    return finish(best.p, best.lam, sc.max_outer_iters, step, converged, "interior")


# ---------------------------------------------------------------------------
# beamformer assembly and checks
# ---------------------------------------------------------------------------

def assemble_beamformer(svd: ChannelSvd, p, c: Criterion) -> BeamformerSet:
    """``P_k = V̄_H^(k)·diag(√P_km)·V_0``."""
    alloc = p if isinstance(p, PowerAllocation) else PowerAllocation(p)
    pa = alloc.p
    if pa.shape != svd.gains.shape:
        raise ConfigError(f"allocation {pa.shape} does not match gains {svd.gains.shape}")
    m = pa.shape[1]
    v0 = rotation_matrix(m, schur_class(c))
    vbar = svd.retained_right
    precoders = (vbar * np.sqrt(pa)[:, None, :]) @ v0
    return BeamformerSet(precoders=precoders, rotation=v0, allocation=alloc, gains=svd.gains)


@dataclass
class ConvexityReport:
    criterion: str
    trials: int
    violations: list = field(default_factory=list)
    max_excess: float = -math.inf
    second_derivative: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return not self.violations


def convexity_probe(c: Criterion, gains, cfg: SystemConfig, trials: int,
                    seed=0, tol: float = 1e-9) -> ConvexityReport:
    """Check ``f(θP¹+(1−θ)P²) ≤ θf(P¹)+(1−θ)f(P²)`` on random allocation pairs.

    For AMSE the analytic second derivative at a random entry of a random
    allocation is also compared with a central finite difference.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    h = _gains(gains)
    rng = make_rng(seed)
    budget = cfg.power_budget
    rep = ConvexityReport(criterion=c.name, trials=trials)

    def f(p):
        return power_objective(c, p, h, cfg)

    for t in range(trials):
        p1 = rng.exponential(size=h.shape) * budget / h.size
        p2 = rng.exponential(size=h.shape) * budget / h.size
        f1, f2 = f(p1), f(p2)
        for theta in (0.25, 0.5, 0.75):
            mid = f(theta * p1 + (1 - theta) * p2)
            excess = mid - (theta * f1 + (1 - theta) * f2)
            scale = max(1.0, abs(f1), abs(f2))
            rel = excess / scale
            rep.max_excess = max(rep.max_excess, rel)
            if rel > tol:
                rep.violations.append((t, theta, rel))

    if _kernel_kind(c) == kernels.AMSE:
        p = rng.exponential(size=h.shape) * budget / h.size
        k, m = rng.integers(h.shape[0]), rng.integers(h.shape[1])
        analytic = float(amse_second_derivative(p, h, cfg)[k, m])
        # Ψ_km changes on the scale (1 + a·P)/a, so the step follows it
        a = cfg.sigma_s2 / cfg.sigma_n2 * h[k, m]
        step = 3e-4 * (p[k, m] + 1.0 / a) if a > 0 else 1e-3 * budget / h.size

        def g(x):
            q = p.copy()
            q[k, m] = x
            return f(q)

        x0 = p[k, m]
        numeric = (g(x0 + step) - 2 * g(x0) + g(x0 - step)) / step ** 2
        rep.second_derivative = {"analytic": analytic, "numeric": numeric,
                                 "rel_err": abs(numeric - analytic) / abs(analytic),
                                 "entry": (int(k), int(m))}
    return rep
