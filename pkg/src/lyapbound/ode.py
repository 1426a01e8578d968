"""Adaptive Dormand-Prince 5(4) integration.

Three entry points cover the package's needs:

* :func:`integrate` - one system, optional exact-hit evaluation times;
* :func:`integrate_batch` - many independent systems with per-element step
  control (used to weigh thousands of covering cubes at once);
* :func:`integrate_sampled` - long runs streamed onto a uniform sample grid
  through a cubic Hermite interpolant, without storing the full trajectory.

Error control is absolute by default (``rtol = 0``); the embedded 4th-order
solution drives step acceptance.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import NonFinite, StepFailure

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                 -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ORDER_EXP = -1.0 / 5.0


def _step_factor(err_norm: float) -> float:
    if err_norm == 0.0:
        return _MAX_FACTOR
    return min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err_norm ** _ORDER_EXP))


def _initial_step(y0: np.ndarray, f0: np.ndarray, atol: float) -> float:
    d0 = float(np.max(np.abs(y0), initial=0.0))
    d1 = float(np.max(np.abs(f0), initial=0.0))
    if d1 < 1e-12:
        return 1e-3
    return max(1e-10, min(1.0, 0.01 * max(d0, atol ** 0.2) / d1))


def integrate(f: Callable, y0: np.ndarray, t0: float, t1: float,
              atol: float = 1e-8, rtol: float = 0.0,
              t_eval: Optional[np.ndarray] = None,
              h0: Optional[float] = None,
              max_steps: int = 10 ** 8):
    """Integrate ``dy/dt = f(t, y)`` from ``t0`` to ``t1``.

    Parameters
    ----------
    f : callable
        Right-hand side ``f(t, y) -> dy/dt`` (flat ndarray in and out).
    t_eval : ndarray, optional
        Strictly increasing times inside ``(t0, t1]``.  Steps are clamped so
        each is hit exactly; states there are returned as a second array.

    Returns
    -------
    y1 : ndarray
        State at ``t1``.
    y_eval : ndarray or None
        States at ``t_eval`` (same order) when requested.

    Raises
    ------
    StepFailure
        On step-size underflow or step-budget exhaustion.
    NonFinite
        If the state stops being finite even at the minimal step size.
    """
    y = np.array(y0, dtype=float)
    have_eval = t_eval is not None
    if have_eval:
        t_eval = np.asarray(t_eval, dtype=float)
        y_eval = np.empty((len(t_eval),) + y.shape)
        next_eval = 0
    if t1 == t0:
        if have_eval:
            y_eval[:] = y
            return y, y_eval
        return y, None

    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    f_cur = np.asarray(f(t0, y), dtype=float)
    h = (h0 if h0 is not None else _initial_step(y, f_cur, atol)) * direction
    t = t0
    k = np.empty((7,) + y.shape)
    tiny = 1e-12 * max(1.0, span)

    for _ in range(max_steps):
        if (t1 - t) * direction <= tiny:
            break
        target = t1
        if have_eval and next_eval < len(t_eval):
            target = t_eval[next_eval]
        h_free = h
        clamped = (t + h - target) * direction > 0.0
        if clamped:
            h = target - t
        k[0] = f_cur
        for i in range(1, 7):
            yi = y + h * np.tensordot(_A[i], k[:i], axes=(0, 0))
            k[i] = f(t + _C[i] * h, yi)
        y_new = yi  # stage-7 state: the 5th-order weights equal row 7
        err_vec = h * np.tensordot(_ERR, k, axes=(0, 0))
        finite = bool(np.all(np.isfinite(y_new)) and np.all(np.isfinite(err_vec)))
        if finite:
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        else:
            err_norm = np.inf
        if err_norm <= 1.0:
            t = t + h
            y = y_new
            f_cur = k[6].copy()
            if have_eval and next_eval < len(t_eval) and \
                    abs(t - t_eval[next_eval]) <= tiny:
                y_eval[next_eval] = y
                next_eval += 1
            h = h_free if clamped else h * _step_factor(err_norm)
        else:
            if not finite and abs(h) <= 1e-13 * max(abs(t), 1.0):
                raise NonFinite("non-finite state at minimal step size")
            h *= _MIN_FACTOR if not finite else _step_factor(err_norm)
        if abs(h) < 1e-14 * max(abs(t), span):
            raise StepFailure("step size underflow")
    else:
        raise StepFailure("maximum number of steps exceeded")

    if have_eval:
        while next_eval < len(t_eval) and \
                abs(t - t_eval[next_eval]) <= 1e-9 * max(1.0, abs(t)):
            y_eval[next_eval] = y
            next_eval += 1
        if next_eval < len(t_eval):
            raise StepFailure("unreached evaluation times")
        return y, y_eval
    return y, None


def integrate_batch(f: Callable, y0: np.ndarray, horizon,
                    atol: float = 1e-8, rtol: float = 0.0,
                    max_steps: int = 10 ** 8) -> np.ndarray:
    """Integrate ``N`` independent systems with per-element step control.

    Parameters
    ----------
    f : callable
        Batched right-hand side ``f(t, Y) -> dY/dt`` mapping ``(M, d)`` to
        ``(M, d)`` (``t`` is a length-``M`` vector of per-element times).
        The same field must apply row-wise: the integrator calls ``f`` on
        arbitrary row subsets as elements finish at different times.
    y0 : ndarray, shape (N, d)
    horizon : float or ndarray, shape (N,)
        Per-element final time (integration starts at 0).

    Returns
    -------
    ndarray, shape (N, d)
        States at the per-element horizons.
    """
    y = np.array(y0, dtype=float)
    n, _ = y.shape
    t_end = np.broadcast_to(np.asarray(horizon, dtype=float), (n,)).copy()
    if np.any(t_end < 0):
        raise ValueError("horizons must be nonnegative")
    t = np.zeros(n)
    f0 = np.asarray(f(t, y), dtype=float)
    d1 = np.abs(f0).max(axis=1)
    h = np.where(d1 < 1e-12, 1e-3,
                 np.clip(0.01 * np.maximum(np.abs(y).max(axis=1), 1e-2)
                         / np.maximum(d1, 1e-12), 1e-10, 1.0))
    h = np.minimum(h, np.maximum(t_end, 1e-300))
    fcur = f0
    done = t >= t_end
    tiny = 1e-12 * np.maximum(1.0, t_end)
    span = np.maximum(t_end, 1e-300)

    for _ in range(max_steps):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            return y
        ti = t[idx]
        hi = np.minimum(h[idx], t_end[idx] - ti)
        yi = y[idx]
        k = np.empty((7,) + yi.shape)
        k[0] = fcur[idx]
        for i in range(1, 7):
            ys = yi + hi[:, None] * np.tensordot(_A[i], k[:i], axes=(0, 0))
            k[i] = f(ti + _C[i] * hi, ys)
        y_new = ys
        err_vec = hi[:, None] * np.tensordot(_ERR, k, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(yi), np.abs(y_new))
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            err_norm = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
        finite = np.isfinite(err_norm) & np.all(np.isfinite(y_new), axis=1)
        err_norm = np.where(finite, err_norm, np.inf)
        accept = err_norm <= 1.0

        acc = idx[accept]
        if acc.size:
            t[acc] = ti[accept] + hi[accept]
            y[acc] = y_new[accept]
            fcur[acc] = k[6][accept]
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            fac = np.where(err_norm == 0.0, _MAX_FACTOR,
                           _SAFETY * err_norm ** _ORDER_EXP)
        fac = np.clip(np.where(np.isfinite(fac), fac, _MIN_FACTOR),
                      _MIN_FACTOR, _MAX_FACTOR)
        h[idx] = hi * fac
        bad = idx[(~finite) & (np.abs(hi) <= 1e-13 * np.maximum(ti, 1.0))]
        if bad.size:
            raise NonFinite("non-finite state at minimal step size")
        under = idx[np.abs(h[idx]) < 1e-14 * span[idx]]
        if under.size:
            raise StepFailure("step size underflow")
        done = t >= t_end - tiny
    raise StepFailure("maximum number of steps exceeded")


def integrate_sampled(f: Callable, y0: np.ndarray, t0: float, t1: float,
                      h_sample: float, consume: Callable,
                      atol: float = 1e-8, rtol: float = 0.0,
                      block: int = 65536, max_steps: int = 10 ** 9) -> np.ndarray:
    """Integrate one (possibly stacked) system and stream uniform samples.

    States at ``t0 + h_sample, t0 + 2 h_sample, ...`` (up to ``t1``) are
    produced from a cubic Hermite interpolant on each accepted step -- local
    position error ``O(h^4)``, ample for assigning states to covering cubes --
    and handed to ``consume(samples)`` in blocks, where ``samples`` has shape
    ``(n_block,) + y0.shape``.

    Returns the final state at ``t1``.
    """
    y = np.array(y0, dtype=float)
    if t1 <= t0:
        raise ValueError("integrate_sampled requires t1 > t0")
    n_samples = int(np.floor((t1 - t0) / h_sample + 1e-9))
    sample_times = t0 + h_sample * np.arange(1, n_samples + 1)
    buf = np.empty((block,) + y.shape)
    n_buf = 0
    next_s = 0

    f_cur = np.asarray(f(t0, y), dtype=float)
    h = _initial_step(y, f_cur, atol)
    t = t0
    span = t1 - t0
    k = np.empty((7,) + y.shape)
    tiny = 1e-12 * max(1.0, span)

    for _ in range(max_steps):
        if t1 - t <= tiny:
            break
        if t + h > t1:
            h = t1 - t
        k[0] = f_cur
        for i in range(1, 7):
            yi = y + h * np.tensordot(_A[i], k[:i], axes=(0, 0))
            k[i] = f(t + _C[i] * h, yi)
        y_new = yi
        err_vec = h * np.tensordot(_ERR, k, axes=(0, 0))
        finite = bool(np.all(np.isfinite(y_new)) and np.all(np.isfinite(err_vec)))
        if finite:
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        else:
            err_norm = np.inf
        if err_norm <= 1.0:
            t_new = t + h
            f_new = k[6]
            # Hermite samples inside (t, t_new]
            while next_s < n_samples and sample_times[next_s] <= t_new + tiny:
                theta = (sample_times[next_s] - t) / h
                th2 = theta * theta
                th3 = th2 * theta
                buf[n_buf] = ((2 * th3 - 3 * th2 + 1) * y
                              + (th3 - 2 * th2 + theta) * h * f_cur
                              + (-2 * th3 + 3 * th2) * y_new
                              + (th3 - th2) * h * f_new)
                n_buf += 1
                next_s += 1
                if n_buf == block:
                    consume(buf[:n_buf].copy())
                    n_buf = 0
            t = t_new
            y = y_new
            f_cur = f_new.copy()
            h *= _step_factor(err_norm)
        else:
            if not finite and h <= 1e-13 * max(abs(t), 1.0):
                raise NonFinite("non-finite state at minimal step size")
            h *= _MIN_FACTOR if not finite else _step_factor(err_norm)
        if h < 1e-14 * max(abs(t), span):
            raise StepFailure("step size underflow")
    else:
        raise StepFailure("maximum number of steps exceeded")
    if n_buf:
        consume(buf[:n_buf].copy())
    return y
