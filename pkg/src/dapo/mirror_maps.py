"""
Mirror maps, their convex conjugates and Bregman machinery.

Three potentials are supported:

* ``l2``: ``Phi(x) = 0.5 * ||x||^2`` on all of R^n (Legendre).
* ``negent_orthant``: ``Phi(x) = sum(x log x - x)`` on the nonnegative orthant
  (Legendre).
* ``negent_simplex``: the same entropy restricted to the probability simplex.
  This one is *not* Legendre; its subdifferential at ``x`` is
  ``log(x) + c * 1`` for any scalar ``c`` and :meth:`MirrorMap.grad` returns the
  ``c = 0`` representative. Its conjugate is taken as ``log-sum-exp``; the
  exact conjugate of ``sum(x log x - x)`` on the simplex is that plus 1, a
  constant that cancels in every gradient and divergence.

Every operation acts on the last axis, so a batch of points of shape
``(..., n)`` is processed in one call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import kl_div, logsumexp, rel_entr, softmax, xlogy

from .errors import DomainError

# Entries below -NEG_TOL are rejected, entries in [-NEG_TOL, 0) are clamped to 0.
NEG_TOL = 1e-9
SIMPLEX_SUM_TOL = 1e-6
LOG_FLOOR = 1e-12


class Variant(str, enum.Enum):
    SQUARED_L2 = "l2"
    NEGENT_ORTHANT = "negent_orthant"
    NEGENT_SIMPLEX = "negent_simplex"


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``y`` onto the probability simplex.

    Sort-and-threshold: with ``u`` sorted in decreasing order, ``rho`` is the
    largest ``k`` such that ``u_k - (sum_{i<=k} u_i - 1) / k > 0`` and the
    result is ``max(y - theta, 0)`` with ``theta = (sum_{i<=rho} u_i - 1) / rho``.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    u = -np.sort(-y, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ks = np.arange(1, n + 1)
    # The condition holds on a prefix of the sorted coordinates.
    rho = np.count_nonzero(u - css / ks > 0, axis=-1)
    theta = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    return np.maximum(y - theta, 0.0)


@dataclass(frozen=True)
class MirrorMap:
    """A mirror map of a given variant, optionally pinned to a dimension."""

    variant: Variant
    dimension: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.dimension is not None and self.dimension < 1:
            raise ValueError("dimension must be a positive integer")

    @classmethod
    def from_key(cls, key: str, dimension: int | None = None) -> "MirrorMap":
        try:
            return cls(Variant(key), dimension)
        except ValueError:
            keys = ", ".join(v.value for v in Variant)
            raise DomainError(f"unknown mirror map {key!r}; expected one of {keys}") from None

    @property
    def entropic(self) -> bool:
        return self.variant is not Variant.SQUARED_L2

    # -- domain helpers -------------------------------------------------

    def _vec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            raise DomainError("expected a vector, got a scalar")
        if self.dimension is not None and x.shape[-1] != self.dimension:
            raise DomainError(f"expected last axis of length {self.dimension}, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite entries")
        return x

    def _primal(self, x) -> np.ndarray:
        x = self._vec(x)
        if not self.entropic:
            return x
        if np.any(x < -NEG_TOL):
            raise DomainError(f"negative entry {x.min():.3g} outside the {self.variant.value} domain")
        x = np.maximum(x, 0.0)
        if self.variant is Variant.NEGENT_SIMPLEX:
            gap = np.abs(x.sum(axis=-1) - 1.0)
            if np.any(gap > SIMPLEX_SUM_TOL):
                raise DomainError(f"point is off the simplex (|sum - 1| = {gap.max():.3g})")
        return x

    def _interior(self, x) -> np.ndarray:
        x = self._primal(x)
        if self.entropic and np.any(x <= 0):
            raise DomainError("entropy mirror maps need strictly positive points")
        return x

    # -- the potential and its conjugate ---------------------------------

    def phi(self, x) -> np.ndarray:
        """Potential value; ``0 log 0 = 0`` for the entropy variants."""
        x = self._primal(x)
        if not self.entropic:
            return 0.5 * np.sum(x * x, axis=-1)
        return np.sum(xlogy(x, x) - x, axis=-1)

    def grad(self, x) -> np.ndarray:
        x = self._interior(x)
        if not self.entropic:
            return x.copy()
        return np.log(np.maximum(x, LOG_FLOOR))

    def conj_grad(self, xstar) -> np.ndarray:
        xstar = self._vec(xstar)
        if self.variant is Variant.SQUARED_L2:
            return xstar.copy()
        if self.variant is Variant.NEGENT_ORTHANT:
            return np.exp(xstar)
        return softmax(xstar, axis=-1)

    def conj_value(self, xstar) -> np.ndarray:
        xstar = self._vec(xstar)
        if self.variant is Variant.SQUARED_L2:
            return 0.5 * np.sum(xstar * xstar, axis=-1)
        if self.variant is Variant.NEGENT_ORTHANT:
            return np.sum(np.exp(xstar), axis=-1)
        return logsumexp(xstar, axis=-1)

    # -- divergences ------------------------------------------------------

    def bregman(self, x, y) -> np.ndarray:
        """``D(x, y) = Phi(x) - Phi(y) - <grad Phi(y), x - y>`` in closed form."""
        x = self._primal(x)
        y = self._primal(y)
        if not self.entropic:
            d = x - y
            return 0.5 * np.sum(d * d, axis=-1)
        if np.any((x > 0) & (y <= 0)):
            raise DomainError("x is not absolutely continuous with respect to y")
        if self.variant is Variant.NEGENT_ORTHANT:
            return np.sum(kl_div(x, y), axis=-1)
        return np.sum(rel_entr(x, y), axis=-1)

    def dual_bregman(self, xstar, ystar) -> np.ndarray:
        """Bregman divergence of the conjugate potential."""
        xstar = self._vec(xstar)
        ystar = self._vec(ystar)
        inner = np.sum(self.conj_grad(ystar) * (xstar - ystar), axis=-1)
        return self.conj_value(xstar) - self.conj_value(ystar) - inner

    # -- projection and the mirror-descent step ---------------------------

    def project(self, y) -> np.ndarray:
        """Bregman projection onto the simplex."""
        if self.variant is Variant.SQUARED_L2:
            return project_simplex(self._vec(y))
        if self.variant is Variant.NEGENT_ORTHANT:
            y = self._vec(y)
            if np.any(y <= 0):
                raise DomainError("orthant-entropy projection needs strictly positive input")
            return y / y.sum(axis=-1, keepdims=True)
        return self._primal(y).copy()

    def md_step(self, x, g, eta: float) -> np.ndarray:
        """One mirror-descent step ``proj(conj_grad(grad(x) - eta * g))``."""
        if not eta > 0:
            raise DomainError("step size must be positive")
        g = self._vec(g)
        return self.project(self.conj_grad(self.grad(x) - eta * g))
