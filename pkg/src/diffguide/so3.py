"""SO(3) primitives: exponential/log maps, Riemannian gradients, tangent noise.

Tangent vectors are stored as 3-vectors v; the matrix representative at base
point x is x @ hat(v) (body frame).  All functions broadcast over leading
batch dimensions.
"""

from __future__ import annotations

import numpy as np

from .errors import BranchCutError

SMALL_ANGLE = 1e-6


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]_x with hat(v) @ u = v x u."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def check_rotation(x: np.ndarray, tol: float = 1e-9) -> bool:
    x = np.asarray(x)
    eye = np.broadcast_to(np.eye(3), x.shape)
    ortho = np.abs(np.swapaxes(x, -1, -2) @ x - eye).max()
    det = np.abs(np.linalg.det(x) - 1.0).max()
    return bool(ortho < tol and det < tol)


def so3_exp(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Geodesic step: x @ exp([v]_x) via Rodrigues' formula.

    The small-angle branch switches to the series expansion of the Rodrigues
    coefficients to avoid 0/0 at v = 0.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    th2 = theta**2
    small = theta < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - th2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - th2 / 24.0,
                     (1.0 - np.cos(theta)) / np.where(small, 1.0, th2))
    V = hat(v)
    rot = np.eye(3) + a[..., None, None] * V + b[..., None, None] * (V @ V)
    return x @ rot


def so3_log(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Tangent vector v with so3_exp(x, v) = y, on the principal branch.

    Raises BranchCutError when the relative angle is within 1e-6 of pi.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rel = np.swapaxes(x, -1, -2) @ y
    cos = np.clip((np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    if np.any(theta >= np.pi - SMALL_ANGLE):
        raise BranchCutError("relative rotation at or beyond the principal branch")
    small = theta < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(small, 0.5 + theta**2 / 12.0,
                          theta / (2.0 * np.sin(np.where(small, 1.0, theta))))
    return factor[..., None] * vee(rel - np.swapaxes(rel, -1, -2))


def so3_riemannian_grad(euclid_grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Project an ambient 3x3 gradient onto the tangent space at x.

    Pulls the gradient to the body frame (x^T G) and keeps the skew part
    0.5 (G~ - G~^T), returned as a 3-vector.  The matrix representative is
    x @ hat(result).
    """
    g = np.swapaxes(np.asarray(x), -1, -2) @ np.asarray(euclid_grad, dtype=float)
    return vee(0.5 * (g - np.swapaxes(g, -1, -2)))


def so3_tangent_noise(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Standard normal tangent coordinates: (3,) or (n, 3)."""
    if n is None:
        return rng.standard_normal(3)
    return rng.standard_normal((n, 3))


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random rotations via QR of a Gaussian matrix, det fixed to +1."""
    a = rng.standard_normal((n, 3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[:, None, :]
    det = np.linalg.det(q)
    q[det < 0, :, 2] *= -1.0
    return q


class So3Process:
    """Analytic toy denoising process on SO(3).

    The process contracts toward a reference rotation `data_rotation` with a
    pull strength that sharpens as t -> 0, mirroring the Euclidean posterior
    mean under an isotropic prior of spread `base_var` around the reference.
    """

    kind = "so3"

    def __init__(self, data_rotation: np.ndarray, schedule, base_var: float = 0.25):
        if not check_rotation(np.asarray(data_rotation), tol=1e-8):
            raise ValueError("data_rotation must be a rotation matrix")
        self.data_rotation = np.asarray(data_rotation, dtype=float)
        self.schedule = schedule
        self.base_var = float(base_var)

    @property
    def T(self) -> int:
        return self.schedule.T

    def init_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return random_rotations(n, rng)

    def score(self, t: int, states: np.ndarray) -> np.ndarray:
        """Tangent-space pull toward the reference rotation, (N, 3)."""
        ab = self.schedule.alpha_bar[t]
        pull = 1.0 / (self.base_var * ab + (1.0 - ab))
        return pull * so3_log(states, self.data_rotation)

    def denoise(self, t: int, states: np.ndarray) -> np.ndarray:
        """Geodesic interpolation toward the reference, vanishing as t -> 0."""
        ab = self.schedule.alpha_bar[t]
        c = (1.0 - ab) / (self.base_var * ab + (1.0 - ab))
        return so3_exp(states, c * so3_log(states, self.data_rotation))

    def step_sample(self, t: int, states: np.ndarray, rng: np.random.Generator,
                    drift_extra: np.ndarray | None = None) -> np.ndarray:
        """One unguided (or drift-shifted) geodesic random-walk step."""
        dt = self.schedule.dt
        vel = dt * self.score(t, states)
        if drift_extra is not None:
            vel = vel + dt * drift_extra
        vel = vel + np.sqrt(dt) * so3_tangent_noise(rng, len(states))
        return so3_exp(states, vel)
