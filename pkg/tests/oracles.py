"""Independent re-implementations used as test oracles.

Nothing here imports the numerics under test; rotations go through
scipy.spatial.transform so that a shared bug cannot cancel out.
"""

import numpy as np
from scipy.spatial.transform import Rotation


def dense_propagate(t, gyro, accel, bg=np.zeros(3), ba=np.zeros(3), gravity=np.zeros(3),
                    C0=np.eye(3), v0=np.zeros(3), p0=np.zeros(3)):
    """Step a navigation state sample by sample with trapezoidal means.

    Works on a leading batch axis: ``gyro``/``accel`` of shape (..., n, 3)
    and biases of shape (..., 3) or (..., n-1, 3) for per-step values.
    """
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    batch = gyro.shape[:-2]
    n = gyro.shape[-2]
    bg = np.broadcast_to(np.asarray(bg, dtype=float), batch + (3,)) if np.ndim(bg) <= len(batch) + 1 \
        else np.asarray(bg)
    ba = np.broadcast_to(np.asarray(ba, dtype=float), batch + (3,)) if np.ndim(ba) <= len(batch) + 1 \
        else np.asarray(ba)
    per_step = np.ndim(bg) == len(batch) + 2
    C = np.broadcast_to(C0, batch + (3, 3)).copy()
    v = np.broadcast_to(v0, batch + (3,)).copy()
    p = np.broadcast_to(p0, batch + (3,)).copy()
    flat = int(np.prod(batch)) if batch else 1
    for k in range(n - 1):
        h = t[k + 1] - t[k]
        gk = bg[..., k, :] if per_step else bg
        ak = ba[..., k, :] if per_step else ba
        w = 0.5 * (gyro[..., k, :] + gyro[..., k + 1, :]) - gk
        a = 0.5 * (accel[..., k, :] + accel[..., k + 1, :]) - ak
        dR = Rotation.from_rotvec((w * h).reshape(flat, 3)).as_matrix().reshape(batch + (3, 3))
        C1 = C @ dR
        a_w = 0.5 * (np.einsum("...ij,...j->...i", C, a) + np.einsum("...ij,...j->...i", C1, a))
        v1 = v + (a_w + gravity) * h
        p = p + v * h + 0.5 * (a_w + gravity) * h * h
        v, C = v1, C1
    return C, v, p


# state-error steps: pose and velocity at 1e-6, biases (weak, near-linear effect) at 1e-4
STATE_EPS = np.repeat([1e-6, 1e-6, 1e-6, 1e-4, 1e-4], 3)


def rotation_log(C):
    return Rotation.from_matrix(C).as_rotvec()


def yaw_fit(p_W, z_G):
    """Least-squares yaw + translation by brute-force grid over yaw, refined
    with a golden-section search. Returns ``(theta, t)``."""
    p_W = np.asarray(p_W, dtype=float)
    z_G = np.asarray(z_G, dtype=float)

    def cost(th):
        c, s = np.cos(th), np.sin(th)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        q = p_W @ R.T
        r = z_G - q
        r = r - r.mean(axis=0)
        return float(np.sum(r * r))

    grid = np.arange(-np.pi, np.pi, 1e-4)
    c, s = np.cos(grid), np.sin(grid)
    pc = p_W - p_W.mean(axis=0)
    zc = z_G - z_G.mean(axis=0)
    # horizontal cost up to constants: -2 * sum(z . R p)
    A = np.sum(zc[:, 0] * pc[:, 0] + zc[:, 1] * pc[:, 1])
    B = np.sum(zc[:, 1] * pc[:, 0] - zc[:, 0] * pc[:, 1])
    k = int(np.argmax(A * c + B * s))
    lo, hi = grid[k] - 1e-4, grid[k] + 1e-4
    g = (np.sqrt(5.0) - 1.0) / 2.0
    for _ in range(80):
        m1, m2 = hi - g * (hi - lo), lo + g * (hi - lo)
        if cost(m1) < cost(m2):
            hi = m2
        else:
            lo = m1
    th = 0.5 * (lo + hi)
    R = np.array([[np.cos(th), -np.sin(th), 0.0], [np.sin(th), np.cos(th), 0.0], [0.0, 0.0, 1.0]])
    t = z_G.mean(axis=0) - R @ p_W.mean(axis=0)
    return th, t


def monte_carlo_covariance(rng, t, gyro, accel, noise, draws):
    """Sample covariance of [d_alpha, d_beta, d_gamma] over noisy re-integrations.

    White noise perturbs each step's averaged measurement with variance
    density / h; biases random-walk between steps.
    """
    n = len(t)
    h = np.diff(t)[:, None]
    C0, v0, p0 = dense_propagate(t, gyro, accel)
    wn = rng.normal(size=(draws, n - 1, 3)) * noise.gyro / np.sqrt(h)
    an = rng.normal(size=(draws, n - 1, 3)) * noise.accel / np.sqrt(h)
    bg = np.concatenate((np.zeros((draws, 1, 3)),
                         np.cumsum(rng.normal(size=(draws, n - 2, 3)) * noise.gyro_walk * np.sqrt(h[:-1]), 1)), 1)
    ba = np.concatenate((np.zeros((draws, 1, 3)),
                         np.cumsum(rng.normal(size=(draws, n - 2, 3)) * noise.accel_walk * np.sqrt(h[:-1]), 1)), 1)
    # fold the per-step noise into the bias argument: both enter as -(bias) on the mean
    C, v, p = dense_propagate(t, np.broadcast_to(gyro, (draws, n, 3)), np.broadcast_to(accel, (draws, n, 3)),
                              bg - wn, ba - an)
    da = rotation_log(C @ C0.T)
    err = np.concatenate((da, v - v0, p - p0), axis=1)
    return np.cov(err.T)


def numeric_jacobian(f, dim, eps=1e-6):
    """Central differences of ``f(delta)`` about ``delta = 0``.

    ``eps`` may be a per-coordinate array.
    """
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (dim,))
    cols = []
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = eps[k]
        cols.append((np.asarray(f(e), dtype=float) - np.asarray(f(-e), dtype=float)) / (2 * eps[k]))
    return np.stack(cols, axis=-1)
