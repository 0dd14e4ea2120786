"""Registry of built-in test systems.

Every coefficient function accepts a single state ``(d,)`` or a batch
``(B, d)`` so the same callables drive both the reference solver and the
vectorized ensemble solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .rde_solver import DiffusionSpec, DriftSpec

# Linearization of a FitzHugh-Nagumo type oscillator around its rest state.
FHN_DAMPING = 0.0730077
FHN_FREQUENCY = 0.31615
FHN_CUBIC = 0.05


@dataclass(frozen=True)
class System:
    name: str
    drift: DriftSpec
    diff: DiffusionSpec
    params: dict
    exact: Optional[Callable] = None

    @property
    def dim(self) -> int:
        return self.diff.dim

    @property
    def noise_dim(self) -> int:
        return self.diff.noise_dim

    def f_batch(self, y):
        return self.drift.f(y)


def _zero(y):
    return np.zeros_like(np.asarray(y, dtype=float))


def scalar_linear(lam: float = 1.0, sigma: float = 0.2) -> System:
    """``dy = -lam y dt + sigma y dx``; exact solution ``y0 exp(-lam t + sigma x_t)``."""
    def g(y):
        return sigma * np.asarray(y, dtype=float)[..., :, None]

    def Dg(y):
        y = np.asarray(y, dtype=float)
        return np.full(y.shape[:-1] + (1, 1, 1), float(sigma))

    def D2g(y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (1, 1, 1, 1))

    def exact(t, x, y0):
        return np.asarray(y0, dtype=float) * np.exp(-lam * (t - t[0]) + sigma * (x[:, 0] - x[0, 0]))[:, None]

    drift = DriftSpec(np.array([[-lam]]), _zero, name="linear", h_fn=lambda r: 0.0)
    diff = DiffusionSpec(g, Dg, D2g, C_g=abs(sigma), dim=1, noise_dim=1, name="linear")
    return System("scalar-linear", drift, diff, {"lambda": lam, "sigma": sigma}, exact)


def diagonal_linear(lam: float = 1.0, sigma: float = 0.2, dim: int = 2) -> System:
    """Independent coordinates ``dy_i = -lam y_i dt + sigma y_i dx^i``."""
    eye = np.eye(dim)

    def g(y):
        y = np.asarray(y, dtype=float)
        return sigma * y[..., :, None] * eye

    def Dg(y):
        y = np.asarray(y, dtype=float)
        t = sigma * np.einsum("ij,il->ijl", eye, eye)
        return np.broadcast_to(t, y.shape[:-1] + t.shape).copy()

    def D2g(y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (dim, dim, dim, dim))

    def exact(t, x, y0):
        return np.asarray(y0, dtype=float) * np.exp(-lam * (t - t[0])[:, None] + sigma * (x - x[0]))

    drift = DriftSpec(-lam * eye, _zero, name="linear", h_fn=lambda r: 0.0)
    diff = DiffusionSpec(g, Dg, D2g, C_g=abs(sigma), dim=dim, noise_dim=dim, name="diagonal")
    return System("diagonal-linear", drift, diff, {"lambda": lam, "sigma": sigma, "dim": dim}, exact)


def sin_diffusion(lam: float = 1.0, sigma: float = 0.05) -> System:
    """``dy = -lam y dt + sigma sin(y) dx`` in one dimension."""
    def g(y):
        return sigma * np.sin(np.asarray(y, dtype=float))[..., :, None]

    def Dg(y):
        return sigma * np.cos(np.asarray(y, dtype=float))[..., :, None, None]

    def D2g(y):
        return -sigma * np.sin(np.asarray(y, dtype=float))[..., :, None, None, None]

    drift = DriftSpec(np.array([[-lam]]), _zero, name="linear", h_fn=lambda r: 0.0)
    diff = DiffusionSpec(g, Dg, D2g, C_g=abs(sigma), dim=1, noise_dim=1, name="sin")
    return System("sin-diffusion", drift, diff, {"lambda": lam, "sigma": sigma})


def fhn_2d(sigma: float = 0.05, damping: float = FHN_DAMPING, frequency: float = FHN_FREQUENCY,
           cubic: float = FHN_CUBIC) -> System:
    """Damped rotation with a saturating cubic-like term and two noise channels.

    Drift ``A y + f(y)`` with ``A = [[-a, w], [-w, -a]]`` and
    ``f(y) = c (tanh(y_1) - y_1, 0)``; diffusion columns ``sigma B_j y``
    with ``B_1 = diag(1, 0)`` (stretch) and ``B_2`` the rotation generator.
    """
    A = np.array([[-damping, frequency], [-frequency, -damping]])
    B = np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, -1.0], [1.0, 0.0]]])

    def f(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        out[..., 0] = cubic * (np.tanh(y[..., 0]) - y[..., 0])
        return out

    def h(r):
        return cubic * min(r * r / 3.0, 1.0)

    def g(y):
        return sigma * np.einsum("jil,...l->...ij", B, np.asarray(y, dtype=float))

    def Dg(y):
        y = np.asarray(y, dtype=float)
        t = sigma * np.transpose(B, (1, 0, 2))
        return np.broadcast_to(t, y.shape[:-1] + t.shape).copy()

    def D2g(y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (2, 2, 2, 2))

    drift = DriftSpec(A, f, C_f=cubic, h_fn=h, name="fhn")
    diff = DiffusionSpec(g, Dg, D2g, C_g=abs(sigma), dim=2, noise_dim=2, name="stretch-rotation")
    return System("fhn-2d", drift, diff, {"sigma": sigma, "damping": damping,
                                          "frequency": frequency, "cubic": cubic})


REGISTRY = {
    "scalar-linear": scalar_linear,
    "diagonal-linear": diagonal_linear,
    "sin-diffusion": sin_diffusion,
    "fhn-2d": fhn_2d,
}


def build(name: str, **params) -> System:
    """Instantiate a registered system, passing only the parameters it accepts."""
    if name not in REGISTRY:
        raise DomainError(f"unknown system {name!r}; choose from {sorted(REGISTRY)}")
    factory = REGISTRY[name]
    code = factory.__code__
    accepted = set(code.co_varnames[:code.co_argcount])
    return factory(**{k: v for k, v in params.items() if k in accepted and v is not None})
