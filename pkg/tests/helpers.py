"""Shared test oracles.

These are deliberately independent of the library code paths they check:
finite differences for gradients, plain loops for reference computations.
"""

from __future__ import annotations

import numpy as np

from chemssm.tensor import Tensor, backward_grad


def finite_difference_grad(fn, arrays, index, h=1e-6):
    """Central-difference gradient of scalar ``fn(*arrays)`` wrt ``arrays[index]``.

    ``fn`` takes plain numpy arrays and returns a float.  Each entry is
    perturbed by ``+-h`` independently.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(*base)
        flat[i] = orig - h
        fm = fn(*base)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(got, want, floor=1e-8):
    """Max elementwise relative error with an absolute floor on the denominator."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.abs(want), floor)
    return float(np.max(np.abs(got - want) / denom))


def grad_error(got, want, floor=1e-8):
    """Max-abs difference scaled by the reference gradient's max magnitude.

    Elementwise ratios are ill-conditioned where the true gradient is near
    zero and the finite-difference oracle only carries ~1e-11 absolute
    accuracy, so gradients are compared at the tensor scale.
    """
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    if want.size == 0:
        return 0.0
    denom = max(float(np.max(np.abs(want))), floor)
    return float(np.max(np.abs(got - want)) / denom)


def rk4_zoh(delta, a, n_steps=1000):
    """Step-response oracle for zero-order-hold discretisation.

    Integrates the scalar ODEs h' = a*h (from h=1) and h' = a*h + 1 (from
    h=0) over one interval of length ``delta`` with classic RK4.  Returns
    (a_bar, b_bar / b) for the standard discretisation.
    """
    dt = delta / n_steps

    def step(f, h):
        k1 = f(h)
        k2 = f(h + 0.5 * dt * k1)
        k3 = f(h + 0.5 * dt * k2)
        k4 = f(h + dt * k3)
        return h + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    ha, hb = 1.0, 0.0
    for _ in range(n_steps):
        ha = step(lambda h: a * h, ha)
        hb = step(lambda h: a * h + 1.0, hb)
    return ha, hb


def implicit_euler(f, jac, y0, t_end, dt, newton_tol=1e-13, newton_max=50):
    """Backward-Euler oracle with full Newton solves at every step.

    First-order but unconditionally stable; small ``dt`` plus Richardson
    extrapolation gives reference values independent of the main solver.
    """
    y = np.array(y0, dtype=np.float64)
    n = int(round(t_end / dt))
    eye = np.eye(y.size)
    for _ in range(n):
        guess = y.copy()
        for _ in range(newton_max):
            res = guess - y - dt * f(guess)
            if np.max(np.abs(res)) < newton_tol:
                break
            guess = guess - np.linalg.solve(eye - dt * jac(guess), res)
        y = guess
    return y


def reference_selective_scan(x, delta, b, c, a, variant="standard"):
    """Scalar-loop oracle for the selective scan (zero initial state)."""
    bsz, T, C = x.shape
    S = a.shape[1]
    y = np.zeros((bsz, T, C))
    for bi in range(bsz):
        h = np.zeros((C, S))
        for t in range(T):
            for ci in range(C):
                for si in range(S):
                    p = delta[bi, t, ci] * a[ci, si]
                    a_bar = np.exp(p)
                    if variant == "standard":
                        phi = np.expm1(p) / p if p != 0.0 else 1.0
                    else:
                        phi = -np.expm1(-p)
                    bx = phi * delta[bi, t, ci] * b[bi, t, si] * x[bi, t, ci]
                    h[ci, si] = a_bar * h[ci, si] + bx
            for ci in range(C):
                y[bi, t, ci] = float(np.dot(c[bi, t], h[ci]))
    return y


def check_gradients(build_fn, arrays, h=1e-6, floor=1e-8):
    """Compare autodiff gradients against finite differences.

    ``build_fn`` maps a list of ``Tensor`` inputs to a scalar ``Tensor``.
    Returns the worst relative error over all inputs.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build_fn(*tensors)
    got = backward_grad(out, tensors)

    def scalar_fn(*arrs):
        ts = [Tensor(a) for a in arrs]
        return build_fn(*ts).item()

    worst = 0.0
    for i in range(len(arrays)):
        want = finite_difference_grad(scalar_fn, arrays, i, h=h)
        worst = max(worst, grad_error(got[i], want, floor=floor))
    return worst


class GroundTruthOracle:
    """Stands in for a model during rollout tests: window ``i`` of the
    prediction is the ground-truth window, whatever the seed was."""

    def __init__(self, truth, stats, starts):
        from types import SimpleNamespace

        self.truth = np.asarray(truth, dtype=np.float64)
        self.stats = stats
        self.starts = list(starts)
        self.calls = 0
        self.pca = None
        self.spec = SimpleNamespace(variant="standalone", time_feature=False)

    def ic_codes(self, ics):
        return self.stats.encode(np.maximum(ics, 0.0), "initial")

    def predict_norm(self, codes, width):
        start = self.starts[self.calls]
        self.calls += 1
        window = self.truth[start:start + width]
        return self.stats.encode(window, "trajectory")[None]

    def decode_norm(self, pred):
        return self.stats.decode(pred, "trajectory")
