"""Hot numeric kernels, each in a numba flavour and a pure-numpy flavour.

Gains are passed as the effective per-entry SNR gain ``a = (σs²/σn²)·H``,
so that ``Ψ = 1 + a·P`` and the waterfilling formula reads
``P = (sqrt(B / (λ·a)) - 1/a)⁺``.

Both flavours implement the same iteration in the same order; the public
names at the bottom of the module dispatch on :data:`_accel.USE_NUMBA`.
"""

import math

import numpy as np

from . import _accel
from ._accel import njit

AMSE, GMSE, ASINR, GSINR = 0, 1, 2, 3

# inner-solve status codes
FIXED_POINT = 0
BRACKETED = 1
UNBOUNDED = 2
FAILED = 3

_LN2 = math.log(2.0)
_MAX_EXPAND = 80
_MAX_BISECT = 200


# ---------------------------------------------------------------------------
# numpy flavour
# ---------------------------------------------------------------------------

def _waterfill_np(lam, b, a):
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.sqrt(b / (lam * a)) - 1.0 / a
    p = np.where(a > 0, p, 0.0)
    return np.maximum(p, 0.0)


def _b_of_np(kind, p, a, sigma_s2):
    # derivative of the per-stream objective w.r.t. the stream MSE
    e = np.mean(1.0 / (1.0 + a * p), axis=0)
    mse = sigma_s2 * e
    if kind == AMSE:
        return np.ones_like(e)
    if kind == GMSE:
        return 1.0 / (_LN2 * mse)
    if kind == ASINR:
        return sigma_s2 / (mse * mse)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (sigma_s2 / (mse * mse)) / (_LN2 * (1.0 / e - 1.0))
    return np.where(e < 1.0, out, np.inf)


def asinr_critical_lambda(a):
    """Multiplier at which the per-stream ASINR Lagrangian turns unbounded.

    Once every subcarrier of a stream is active the stream SINR is affine in
    the stream power; its slope, in waterfilling units, is returned per
    column of ``a``.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    with np.errstate(divide="ignore"):
        w = np.where(a > 0, 1.0 / np.sqrt(a), np.inf)
    s = np.sum(w, axis=0)
    return np.where(np.isfinite(s), n * n / (s * s), 0.0)


def _inner_solve_np(kind, lam, a, sigma_s2, b0, gamma, max_iter, tol):
    n, m = a.shape
    b = np.array(b0, dtype=float, copy=True)
    status = np.full(m, FIXED_POINT, dtype=np.int64)
    iters = np.zeros(m, dtype=np.int64)
    if kind == AMSE:
        b[:] = 1.0
        return _waterfill_np(lam, b, a), b, iters, status

    if kind == ASINR:
        crit = asinr_critical_lambda(a)
        status[lam <= crit] = UNBOUNDED

    active = status == FIXED_POINT
    converged = np.zeros(m, dtype=bool)
    for it in range(1, max_iter + 1):
        live = active & ~converged
        if not live.any():
            break
        bl = b[live]
        p = _waterfill_np(lam, bl, a[:, live])
        bn = _b_of_np(kind, p, a[:, live], sigma_s2)
        bn = np.where(np.isfinite(bn), bn, 4.0 * bl)
        change = np.abs(bn - bl) / bl
        b[live] = (1.0 - gamma) * bl + gamma * bn
        iters[live] = it
        converged[np.flatnonzero(live)[change < tol]] = True
    for j in np.flatnonzero(active & ~converged):
        b[j], status[j] = _bracket_stream_np(kind, lam, a[:, j], sigma_s2, b[j])

    p = _waterfill_np(lam, b, a)
    p[:, status == UNBOUNDED] = np.inf
    return p, b, iters, status


def _phi_np(kind, lam, a_col, sigma_s2, x):
    p = _waterfill_np(lam, np.array([math.exp(x)]), a_col[:, None])
    bv = _b_of_np(kind, p, a_col[:, None], sigma_s2)[0]
    if not np.isfinite(bv):
        return math.inf
    return math.log(bv) - x


def _bracket_stream_np(kind, lam, a_col, sigma_s2, b_start):
    x0 = math.log(b_start) if b_start > 0 and np.isfinite(b_start) else 0.0
    lo = x0
    step = 1.0
    k = 0
    while _phi_np(kind, lam, a_col, sigma_s2, lo) <= 0.0:
        lo -= step
        step *= 2.0
        k += 1
        if k > _MAX_EXPAND:
            return b_start, FAILED
    hi = x0
    step = 1.0
    k = 0
    while _phi_np(kind, lam, a_col, sigma_s2, hi) >= 0.0:
        hi += step
        step *= 2.0
        k += 1
        if k > _MAX_EXPAND:
            return b_start, UNBOUNDED
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _phi_np(kind, lam, a_col, sigma_s2, mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi)), BRACKETED


def _channel_convolve_np(x, taps, cp_len):
    nb, nc, nt = x.shape
    n_taps, nr, _ = taps.shape
    xc = np.concatenate([x[:, nc - cp_len:, :], x], axis=1)
    total = nc + cp_len
    y = np.zeros((nb, total, nr), dtype=np.complex128)
    for ell in range(n_taps):
        y[:, ell:, :] += xc[:, : total - ell, :] @ taps[ell].T
    return y


# ---------------------------------------------------------------------------
# numba flavour
# ---------------------------------------------------------------------------

@njit
def _waterfill_col_nb(lam, b, a_col, out):
    for k in range(a_col.shape[0]):
        ak = a_col[k]
        if ak > 0.0:
            v = math.sqrt(b / (lam * ak)) - 1.0 / ak
            out[k] = v if v > 0.0 else 0.0
        else:
            out[k] = 0.0


@njit
def _waterfill_nb(lam, b, a):
    n, m = a.shape
    p = np.empty((n, m))
    col = np.empty(n)
    for j in range(m):
        _waterfill_col_nb(lam, b[j], a[:, j], col)
        for k in range(n):
            p[k, j] = col[k]
    return p


@njit
def _b_col_nb(kind, p_col, a_col, sigma_s2):
    n = a_col.shape[0]
    acc = 0.0
    for k in range(n):
        acc += 1.0 / (1.0 + a_col[k] * p_col[k])
    e = acc / n
    mse = sigma_s2 * e
    if kind == AMSE:
        return 1.0
    if kind == GMSE:
        return 1.0 / (_LN2 * mse)
    if kind == ASINR:
        return sigma_s2 / (mse * mse)
    if e >= 1.0:
        return np.inf
    return (sigma_s2 / (mse * mse)) / (_LN2 * (1.0 / e - 1.0))


@njit
def _phi_nb(kind, lam, a_col, sigma_s2, x, work):
    _waterfill_col_nb(lam, math.exp(x), a_col, work)
    bv = _b_col_nb(kind, work, a_col, sigma_s2)
    if not np.isfinite(bv):
        return np.inf
    return math.log(bv) - x


@njit
def _bracket_stream_nb(kind, lam, a_col, sigma_s2, b_start, work):
    if b_start > 0.0 and np.isfinite(b_start):
        x0 = math.log(b_start)
    else:
        x0 = 0.0
    lo = x0
    step = 1.0
    k = 0
    while _phi_nb(kind, lam, a_col, sigma_s2, lo, work) <= 0.0:
        lo -= step
        step *= 2.0
        k += 1
        if k > _MAX_EXPAND:
            return b_start, FAILED
    hi = x0
    step = 1.0
    k = 0
    while _phi_nb(kind, lam, a_col, sigma_s2, hi, work) >= 0.0:
        hi += step
        step *= 2.0
        k += 1
        if k > _MAX_EXPAND:
            return b_start, UNBOUNDED
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _phi_nb(kind, lam, a_col, sigma_s2, mid, work) > 0.0:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi)), BRACKETED


@njit
def _inner_solve_nb(kind, lam, a, sigma_s2, b0, gamma, max_iter, tol):
    n, m = a.shape
    b = b0.copy()
    status = np.zeros(m, dtype=np.int64)
    iters = np.zeros(m, dtype=np.int64)
    work = np.empty(n)
    if kind == AMSE:
        for j in range(m):
            b[j] = 1.0
        return _waterfill_nb(lam, b, a), b, iters, status

    for j in range(m):
        a_col = a[:, j]
        if kind == ASINR:
            s = 0.0
            for k in range(n):
                s += 1.0 / math.sqrt(a_col[k]) if a_col[k] > 0.0 else np.inf
            crit = n * n / (s * s) if np.isfinite(s) else 0.0
            if lam <= crit:
                status[j] = UNBOUNDED
                continue
        bj = b[j]
        converged = False
        for it in range(1, max_iter + 1):
            _waterfill_col_nb(lam, bj, a_col, work)
            bn = _b_col_nb(kind, work, a_col, sigma_s2)
            if not np.isfinite(bn):
                bn = 4.0 * bj
            change = abs(bn - bj) / bj
            bj = (1.0 - gamma) * bj + gamma * bn
            iters[j] = it
            if change < tol:
                converged = True
                break
        if not converged:
            bj, st = _bracket_stream_nb(kind, lam, a_col, sigma_s2, bj, work)
            status[j] = st
        b[j] = bj

    p = _waterfill_nb(lam, b, a)
    for j in range(m):
        if status[j] == UNBOUNDED:
            for k in range(n):
                p[k, j] = np.inf
    return p, b, iters, status


@njit
def _channel_convolve_nb(x, taps, cp_len):
    nb, nc, nt = x.shape
    n_taps, nr, _ = taps.shape
    total = nc + cp_len
    y = np.zeros((nb, total, nr), dtype=np.complex128)
    for blk in range(nb):
        for n in range(total):
            for ell in range(min(n_taps, n + 1)):
                src = n - ell - cp_len
                if src < 0:
                    src += nc
                for r in range(nr):
                    acc = 0j
                    for t in range(nt):
                        acc += taps[ell, r, t] * x[blk, src, t]
                    y[blk, n, r] += acc
    return y


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

NUMPY = {
    "waterfill": _waterfill_np,
    "inner_solve": _inner_solve_np,
    "channel_convolve": _channel_convolve_np,
}
NUMBA = {
    "waterfill": _waterfill_nb,
    "inner_solve": _inner_solve_nb,
    "channel_convolve": _channel_convolve_nb,
}


def _pick(name):
    return (NUMBA if _accel.USE_NUMBA else NUMPY)[name]


def waterfill(lam, b, a):
    """Per-entry waterfilling ``P = (sqrt(B_m/(λ a_km)) - 1/a_km)⁺``; zero where ``a = 0``."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    return _pick("waterfill")(float(lam), b, a)


def inner_solve(kind, lam, a, sigma_s2, b0, gamma=0.5, max_iter=200, tol=1e-13):
    """Damped fixed point on the stream factors with a bisection fallback.

    Returns ``(P, B, iterations, status)`` where ``status`` holds one code per
    stream (:data:`FIXED_POINT`, :data:`BRACKETED`, :data:`UNBOUNDED`,
    :data:`FAILED`). Unbounded streams carry ``inf`` power.
    """
    a = np.ascontiguousarray(a, dtype=float)
    b0 = np.ascontiguousarray(b0, dtype=float)
    return _pick("inner_solve")(int(kind), float(lam), a, float(sigma_s2), b0,
                                float(gamma), int(max_iter), float(tol))


def channel_convolve(x, taps, cp_len):
    """Prepend a CP of ``cp_len`` samples to each block and run it through the taps.

    ``x`` is ``(blocks, N_c, N_t)``, ``taps`` is ``(L, N_r, N_t)``; the result
    is the received ``(blocks, N_c + cp_len, N_r)`` sequence before noise.
    """
    x = np.ascontiguousarray(x, dtype=np.complex128)
    taps = np.ascontiguousarray(taps, dtype=np.complex128)
    return _pick("channel_convolve")(x, taps, int(cp_len))
