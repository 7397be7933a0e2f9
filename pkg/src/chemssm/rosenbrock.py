"""Linearly implicit Rosenbrock integrator for stiff kinetics.

Four-stage third-order scheme (RODAS3 family) in the standard K-form for an
autonomous system y' = f(y):

    (I/(h*gamma) - J) K_i = f(Y_i) + sum_j (c_ij / h) K_j
    Y_i   = y0 + sum_j a_ij K_j
    y1    = y0 + sum_j m_j K_j,    err = sum_j e_j K_j

Steps never cross the requested output grid: the step size is clipped to land
on each grid time exactly, so no dense-output interpolation is needed.
"""

from __future__ import annotations

import numpy as np

__all__ = ["IntegratorError", "rosenbrock_solve"]

# Stage coefficients; a/c are strictly lower triangular, indexed [i][j].
_GAMMA = 0.5
_A = ((), (0.0,), (2.0, 0.0), (2.0, 0.0, 1.0))
_C = ((), (4.0,), (1.0, -1.0), (1.0, -1.0, -8.0 / 3.0))
_M = (2.0, 0.0, 1.0, 1.0)
_E = (0.0, 0.0, 0.0, 1.0)
_NEW_F = (True, False, True, True)  # stage 2 reuses the stage-1 evaluation
_ORDER_EXP = 1.0 / 3.0


class IntegratorError(RuntimeError):
    """Step-size underflow or step budget exhausted; carries the time reached."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(message)
        self.t_reached = t_reached


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def rosenbrock_solve(f, jac, y0, t_grid, rtol=1e-8, atol=1e-10, max_steps=1_000_000):
    """Integrate ``y' = f(y)`` and return states at every grid time.

    ``jac`` returns the dense Jacobian of ``f``.  The grid must be strictly
    increasing; the first entry is the initial time.  Raises
    :class:`IntegratorError` when the controller underflows or the attempt
    budget runs out, reporting how far integration got.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or t_grid.size < 2:
        raise ValueError("t_grid must contain at least two times")
    if np.any(np.diff(t_grid) <= 0.0):
        raise ValueError("t_grid must be strictly increasing")
    y = np.array(y0, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("y0 must be one-dimensional")
    dim = y.size
    eye = np.eye(dim)

    out = np.empty((t_grid.size, dim), dtype=np.float64)
    out[0] = y
    t = float(t_grid[0])
    h_free = (t_grid[1] - t_grid[0]) * 1e-2  # controller ramps up from here
    attempts = 0

    for gi in range(1, t_grid.size):
        target = float(t_grid[gi])
        while True:
            remaining = target - t
            if remaining <= 1e-14 * max(abs(target), 1.0):
                break
            h_min = 16.0 * np.finfo(np.float64).eps * max(abs(t), 1.0)
            if h_free < h_min:
                raise IntegratorError(
                    f"step size underflow ({h_free:.3e}) at t={t:.6e}", t)
            if attempts >= max_steps:
                raise IntegratorError(
                    f"exceeded {max_steps} step attempts at t={t:.6e}", t)
            attempts += 1
            hit_boundary = h_free >= remaining
            h = remaining if hit_boundary else h_free

            g = eye / (h * _GAMMA) - jac(y)
            k = []
            f_prev = None
            try:
                for i in range(4):
                    if _NEW_F[i]:
                        y_stage = y.copy()
                        for j, aij in enumerate(_A[i]):
                            if aij != 0.0:
                                y_stage += aij * k[j]
                        f_i = np.asarray(f(y_stage), dtype=np.float64)
                    else:
                        f_i = f_prev
                    rhs = f_i.copy()
                    for j, cij in enumerate(_C[i]):
                        if cij != 0.0:
                            rhs += (cij / h) * k[j]
                    k.append(np.linalg.solve(g, rhs))
                    f_prev = f_i
            except np.linalg.LinAlgError as exc:
                raise IntegratorError(f"singular stage matrix at t={t:.6e}", t) from exc

            y_new = y.copy()
            for j, mj in enumerate(_M):
                if mj != 0.0:
                    y_new += mj * k[j]
            err_vec = sum(ej * k[j] for j, ej in enumerate(_E) if ej != 0.0)
            if not np.all(np.isfinite(y_new)):
                err = np.inf
            else:
                err = _error_norm(err_vec, y, y_new, rtol, atol)

            if err <= 1.0:
                y = y_new
                t = target if hit_boundary else t + h
                factor = min(6.0, max(0.2, 0.9 * err ** -_ORDER_EXP)) if err > 0 else 6.0
                grown = h * factor
                # do not let a boundary-clipped step shrink the controller
                h_free = max(h_free, grown) if hit_boundary else grown
            else:
                h_free = h * min(1.0, max(0.2, 0.9 * err ** -_ORDER_EXP))
        out[gi] = y
    return out
