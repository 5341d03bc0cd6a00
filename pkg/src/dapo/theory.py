"""
Numerical checks of the inequalities behind the convergence analysis.

Each ``check_*`` function evaluates one inequality on concrete inputs and
returns a :class:`Check`. The ``campaign`` machinery draws seeded random
inputs for a named check, shards the draws over threads and writes a JSON
witness file for every violation so the failing case can be replayed with
:func:`replay_witness`.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import log_softmax, rel_entr, softmax

from . import approx as X
from .errors import DomainError
from .mirror_maps import MirrorMap, Variant, project_simplex

TOL = 1e-9
BASE_TOL = 1e-8
# Largest Euclidean distance between two points of the simplex.
SIMPLEX_DIAMETER = math.sqrt(2.0)
BOUNDARY_MIN = 1e-8

L2 = MirrorMap(Variant.SQUARED_L2)
KL = MirrorMap(Variant.NEGENT_SIMPLEX)
ORTHANT = MirrorMap(Variant.NEGENT_ORTHANT)


class Check(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def _check(lhs, rhs, tol=TOL) -> Check:
    lhs, rhs = float(lhs), float(rhs)
    return Check(lhs, rhs, bool(lhs <= rhs + tol))


@dataclass(frozen=True)
class TheoryConstants:
    """The slack function ``psi`` and step exponent ``omega`` of a mirror map.

    ``l2``: ``psi(x) = sqrt(2x)``, ``omega = 2``.
    ``kl``: ``psi(x) = (1 + C)(x + sqrt(2x))``, ``omega = 1``.
    """

    psi_kind: str
    C: float = 0.0

    def __post_init__(self):
        if self.psi_kind not in ("l2", "kl"):
            raise DomainError(f"psi_kind must be 'l2' or 'kl', got {self.psi_kind!r}")
        if not self.C >= 0:
            raise DomainError("C must be nonnegative")

    @classmethod
    def for_mirror(cls, mirror: MirrorMap, C: float = 0.0) -> "TheoryConstants":
        return cls("kl" if mirror.entropic else "l2", C)

    @property
    def omega(self) -> int:
        return 2 if self.psi_kind == "l2" else 1

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -TOL):
            raise DomainError("psi is defined on [0, inf)")
        x = np.maximum(x, 0.0)
        root = np.sqrt(2.0 * x)
        if self.psi_kind == "l2":
            return root
        return (1.0 + self.C) * (x + root)


# -- single checks -----------------------------------------------------------


def _three_point(mirror: MirrorMap, u, ustar, c) -> float:
    return float(mirror.bregman(u, ustar) + mirror.bregman(ustar, c) - mirror.bregman(u, c))


def check_pythagorean_general(mirror: MirrorMap, u, v, c) -> Check:
    """``D(u,u*) + D(u*,c) - D(u,c) <= <grad(v) - grad(c), u* - u>`` with ``u*`` the projection of ``v``."""
    u = KL._primal(u)
    ustar = mirror.project(v)
    lhs = _three_point(mirror, u, ustar, c)
    rhs = np.dot(mirror.grad(v) - mirror.grad(c), ustar - u)
    return _check(lhs, rhs)


def check_pythagorean_l2(u, v, c, scale: float = 1.0) -> Check:
    """Euclidean case: the three-point term is at most ``scale * sqrt(2 D(v, c))``.

    ``scale = 1`` is the bound as usually quoted. Bounding ``||u* - u||`` by the
    simplex diameter gives the always-valid ``scale = SIMPLEX_DIAMETER``.
    """
    u = KL._primal(u)
    ustar = L2.project(v)
    lhs = _three_point(L2, u, ustar, c)
    rhs = scale * math.sqrt(2.0 * float(L2.bregman(v, c)))
    return _check(lhs, rhs)


def check_pythagorean_kl(u, v, c) -> Check:
    """Entropy case with ``v`` on the simplex, so ``u* = v``."""
    u = KL._primal(u)
    v = KL._interior(v)
    c = KL._interior(c)
    lhs = _three_point(KL, u, v, c)
    d = float(KL.bregman(v, c))
    rhs = (1.0 + float(np.max(u / v))) * (d + math.sqrt(2.0 * d))
    return _check(lhs, rhs)


def check_abs_kl_bound(p, q) -> Check:
    """``<|log(p/q)|, p> <= KL(p||q) + sqrt(2 KL(p||q))``."""
    p = KL._primal(p)
    q = KL._primal(q)
    if np.any((p > 0) & (q <= 0)):
        raise DomainError("p is not absolutely continuous with respect to q")
    on = p > 0
    lhs = np.sum(p[on] * np.abs(np.log(p[on] / q[on])))
    d = max(float(np.sum(rel_entr(p, q))), 0.0)
    return _check(lhs, d + math.sqrt(2.0 * d))


LOG_TINY = 1e-300
LOG_MAX = math.log(np.finfo(float).max)


def _kl(p, logp, logq):
    return np.sum(np.where(p > 0, p * (logp - logq), 0.0), axis=1)


def _expm1_minus_x(x):
    small = np.abs(x) < 1e-4
    return np.where(small, x * x * (0.5 + x / 6.0), np.expm1(x) - x)


def kl_from_logits(F, T) -> np.ndarray:
    """Row-wise ``KL(softmax(F) || softmax(T))`` without cancellation.

    With ``g = T - F`` centered under ``p = softmax(F)``, the divergence is
    ``log1p(E_p[expm1(g) - g])``, a sum of nonnegative terms.
    """
    F = np.atleast_2d(F)
    g = np.atleast_2d(T) - F
    p = softmax(F, axis=1)
    finite = p > 0
    g = np.where(finite, g, 0.0)
    g = g - np.sum(p * g, axis=1, keepdims=True)
    # differences below the rounding resolution of the inputs are noise
    resolution = 8.0 * np.finfo(float).eps * (np.abs(np.where(finite, F, 0.0)) + np.abs(g).max(axis=1, keepdims=True))
    g = np.where(np.abs(g) <= resolution, 0.0, g)
    return np.log1p(np.sum(np.where(finite, p * _expm1_minus_x(g), 0.0), axis=1))


@dataclass(frozen=True)
class BaseRelation:
    """Per-state sides of the one-step inequality."""

    lhs: np.ndarray
    rhs: np.ndarray
    divergence: np.ndarray
    tol: float = BASE_TOL

    @property
    def slack(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs + self.tol))


def check_base_relation(mirror: MirrorMap, pi_k, f_next, qhat, eta: float, pi_ref,
                        l2_scale: float = 1.0) -> BaseRelation:
    """One actor step against a reference policy, state by state.

    With ``pi_next`` the projection of ``f_next``, checks
    ``eta <Q_s, pi_next - pi> + D(pi, pi_next) + D(pi_next, pi_k) - D(pi, pi_k) <= psi_s(delta_s)``
    where ``delta_s`` is the divergence between the primal images of ``f_next``
    and of the exact target ``grad(pi_k) - eta Q``. For the entropy map
    ``psi_s`` uses ``C_s = max(pi / pi_next)``; ``l2_scale`` multiplies the
    Euclidean ``psi`` as in :func:`check_pythagorean_l2`.
    """
    pi_k = np.atleast_2d(np.asarray(pi_k, dtype=float))
    pi_ref = np.atleast_2d(np.asarray(pi_ref, dtype=float))
    F = np.atleast_2d(np.asarray(f_next, dtype=float))
    Q = np.atleast_2d(np.asarray(qhat, dtype=float))
    if not (pi_k.shape == pi_ref.shape == F.shape == Q.shape):
        raise DomainError("pi_k, f_next, qhat and pi_ref must share one shape")
    if not eta > 0:
        raise DomainError("eta must be positive")
    if mirror.variant is Variant.SQUARED_L2:
        pi_next = project_simplex(F)
        target = pi_k - eta * Q
        div = 0.5 * np.sum((F - target) ** 2, axis=1)
        rhs = l2_scale * TheoryConstants("l2").psi(div)
    elif mirror.variant is Variant.NEGENT_SIMPLEX:
        # log space throughout: pi_next may hold entries far below the float range of exp
        log_next = log_softmax(F, axis=1)
        log_k = np.log(np.maximum(pi_k, LOG_TINY))
        target = log_softmax(log_k - eta * Q, axis=1)
        pi_next = np.exp(log_next)
        div = kl_from_logits(F, target)
        log_ref = np.log(np.maximum(pi_ref, LOG_TINY))
        C = np.exp(np.minimum(np.max(log_ref - log_next, axis=1), LOG_MAX))
        rhs = (1.0 + C) * (div + np.sqrt(2.0 * div))
        lhs = (eta * np.sum(Q * (pi_next - pi_ref), axis=1) + _kl(pi_ref, log_ref, log_next)
               + _kl(pi_next, log_next, log_k) - _kl(pi_ref, log_ref, log_k))
        return BaseRelation(lhs, rhs, div)
    else:
        raise DomainError("the one-step check is defined for the l2 and simplex-entropy maps")
    lhs = (eta * np.sum(Q * (pi_next - pi_ref), axis=1) + mirror.bregman(pi_ref, pi_next)
           + mirror.bregman(pi_next, pi_k) - mirror.bregman(pi_ref, pi_k))
    return BaseRelation(np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float), div)


@dataclass(frozen=True)
class IdentityReport:
    variant: str
    n_samples: int
    inverse_err: float
    shift_err: float

    def holds(self, inverse_tol: float = 1e-10, shift_tol: float = TOL) -> bool:
        return self.inverse_err <= inverse_tol and self.shift_err <= shift_tol


def check_conjugate_identities(mirror: MirrorMap, n_samples: int = 10_000, seed: int = 0,
                               dims=range(2, 17)) -> IdentityReport:
    """Worst errors of ``conj_grad(grad(x)) = x`` and ``<grad(conj_grad(y*)), x - y> = <y*, x - y>``.

    Interior points are Dirichlet(1) draws floored at 1e-6 (and renormalized
    on the simplex); dual points are standard normal.
    """
    rng = np.random.default_rng(seed)
    dims = list(dims)
    inv = shift = 0.0
    for i in range(n_samples):
        n = dims[i % len(dims)]
        x = np.maximum(rng.dirichlet(np.ones(n)), 1e-6)
        x /= x.sum()
        if mirror.variant is Variant.NEGENT_ORTHANT:
            x = x * rng.uniform(0.1, 10.0)
        inv = max(inv, float(np.max(np.abs(mirror.conj_grad(mirror.grad(x)) - x))))
        xs = rng.normal(size=n)
        a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        left = np.dot(mirror.grad(mirror.conj_grad(xs)), a - b)
        shift = max(shift, abs(float(left - np.dot(xs, a - b))))
    return IdentityReport(mirror.variant.value, n_samples, inv, shift)


# -- fuzz campaigns ----------------------------------------------------------


def _simplex(rng, n, boundary=False):
    x = rng.dirichlet(np.ones(n))
    if boundary:
        x = np.maximum(x, BOUNDARY_MIN)
        x /= x.sum()
    return x


def _draw_general(rng, boundary):
    n = int(rng.integers(2, 9))
    u = _simplex(rng, n, boundary)
    if rng.random() < 0.5:
        return {"mirror": "l2", "u": u, "v": rng.normal(size=n), "c": rng.normal(size=n)}
    # orthant entropy: v, c positive, projection is l1 normalization
    return {"mirror": "negent_orthant", "u": u, "v": np.exp(rng.normal(size=n)),
            "c": np.exp(rng.normal(size=n))}


def _run_general(case, l2_scale=1.0):
    return check_pythagorean_general(MirrorMap.from_key(case["mirror"]), case["u"], case["v"], case["c"])


def _draw_l2(rng, boundary):
    n = int(rng.integers(2, 9))
    return {"u": _simplex(rng, n, boundary), "v": rng.normal(size=n), "c": rng.normal(size=n)}


def _draw_kl(rng, boundary):
    n = int(rng.integers(2, 9))
    return {"u": _simplex(rng, n, boundary), "v": _simplex(rng, n, True),
            "c": _simplex(rng, n, True)}


def _draw_abs_kl(rng, boundary):
    n = int(rng.integers(2, 17))
    p = _simplex(rng, n, boundary)
    if not boundary and rng.random() < 0.1:
        p[rng.integers(n)] = 0.0  # exact zeros are allowed in p
        p = p / p.sum() if p.sum() > 0 else np.full(n, 1.0 / n)
    return {"p": p, "q": _simplex(rng, n, True)}


def _draw_base(rng, boundary):
    S, A = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    mirror = "l2" if rng.random() < 0.5 else "negent_simplex"
    pi_k = np.stack([_simplex(rng, A, True) for _ in range(S)])
    Q = rng.uniform(0.0, 1.0 / (1.0 - 0.9), (S, A))
    eta = float(rng.uniform(0.1, 10.0))
    exact = (pi_k - eta * Q) if mirror == "l2" else np.log(pi_k) - eta * Q
    F = exact + rng.normal(scale=10.0 ** rng.uniform(-4, 0), size=(S, A))
    pi_star = np.stack([_simplex(rng, A, boundary) for _ in range(S)])
    pi_ref = pi_k if rng.random() < 0.5 else pi_star
    return {"mirror": mirror, "pi_k": pi_k, "f_next": F, "qhat": Q, "eta": eta, "pi_ref": pi_ref}


def _run_base(case, l2_scale=1.0):
    res = check_base_relation(MirrorMap.from_key(case["mirror"]), case["pi_k"], case["f_next"],
                              case["qhat"], case["eta"], case["pi_ref"], l2_scale=l2_scale)
    i = int(np.argmin(res.slack))
    return Check(float(res.lhs[i]), float(res.rhs[i]), res.holds)


def _draw_dual(rng, boundary):
    key = ("l2", "negent_orthant", "negent_simplex")[int(rng.integers(3))]
    n = int(rng.integers(2, 17))
    x = _simplex(rng, n, True)
    y = _simplex(rng, n, True)
    if key == "l2":
        x, y = rng.normal(size=n), rng.normal(size=n)
    elif key == "negent_orthant":
        x, y = x * rng.uniform(0.1, 10.0), y * rng.uniform(0.1, 10.0)
    return {"mirror": key, "x": x, "y": y}


def _run_dual(case, l2_scale=1.0):
    m = MirrorMap.from_key(case["mirror"])
    x, y = case["x"], case["y"]
    dual = m.dual_bregman(m.grad(y), m.grad(x))
    return _check(abs(float(dual - m.bregman(x, y))), 0.0)


@dataclass(frozen=True)
class Lemma:
    name: str
    draw: Callable
    check: Callable
    description: str


LEMMAS: dict[str, Lemma] = {
    lem.name: lem
    for lem in (
        Lemma("dual_bregman", _draw_dual, _run_dual, "dual divergence equals swapped primal divergence"),
        Lemma("pythagorean_general", _draw_general, _run_general, "projected three-point inequality"),
        Lemma("pythagorean_l2", _draw_l2,
              lambda c, l2_scale=1.0: check_pythagorean_l2(c["u"], c["v"], c["c"], l2_scale),
              "Euclidean three-point bound sqrt(2 D(v,c))"),
        Lemma("pythagorean_kl", _draw_kl, lambda c, l2_scale=1.0: check_pythagorean_kl(c["u"], c["v"], c["c"]),
              "entropy three-point bound"),
        Lemma("abs_kl", _draw_abs_kl, lambda c, l2_scale=1.0: check_abs_kl_bound(c["p"], c["q"]),
              "absolute log-ratio bound"),
        Lemma("base_relation", _draw_base, _run_base, "one-step actor inequality"),
    )
}


@dataclass
class CampaignResult:
    lemma: str
    n_samples: int
    seed: int
    violations: int = 0
    worst_margin: float = math.inf
    witnesses: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.violations == 0

    def summary(self) -> str:
        status = "ok" if self.holds else "VIOLATED"
        return (f"{self.lemma}: {self.n_samples - self.violations}/{self.n_samples} hold, "
                f"worst margin {self.worst_margin:.3e} [{status}]")


def _encode(case: dict) -> dict:
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in case.items()}


def _decode(case: dict) -> dict:
    return {k: (np.asarray(v, dtype=float) if isinstance(v, list) else v) for k, v in case.items()}


def write_witness(directory, lemma: str, seed: int, index: int, case: dict, result: Check,
                  l2_scale: float = 1.0) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{lemma}_seed{seed}_{index}.json"
    doc = {"lemma": lemma, "seed": seed, "index": index, "l2_scale": l2_scale, "case": _encode(case),
           "lhs": result.lhs, "rhs": result.rhs}
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def replay_witness(path) -> Check:
    """Re-run the check stored in a witness file."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return LEMMAS[doc["lemma"]].check(_decode(doc["case"]), doc.get("l2_scale", 1.0))


def _shard(lemma: Lemma, seed: int, shard: int, count: int, boundary_every: int, l2_scale: float = 1.0):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(shard,))))
    out = []
    for j in range(count):
        case = lemma.draw(rng, boundary_every > 0 and j % boundary_every == 0)
        out.append((case, lemma.check(case, l2_scale)))
    return out


def run_campaign(name: str, n_samples: int = 10_000, seed: int = 0, witness_dir=None,
                 shards: int = 8, threads: int | None = None, boundary_every: int = 10,
                 max_witnesses: int = 20, l2_scale: float = 1.0) -> CampaignResult:
    """Seeded fuzz of one named check.

    Draws are split into ``shards`` independent streams, so the result does not
    depend on ``threads``. Every ``boundary_every``-th draw of a shard uses
    points clamped to a minimum entry of 1e-8. ``l2_scale`` is forwarded to the
    Euclidean bounds.
    """
    if name not in LEMMAS:
        raise DomainError(f"unknown check {name!r}; expected one of {', '.join(LEMMAS)}")
    if n_samples < 1 or shards < 1:
        raise DomainError("n_samples and shards must be positive")
    lemma = LEMMAS[name]
    sizes = [n_samples // shards + (i < n_samples % shards) for i in range(shards)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda i: _shard(lemma, seed, i, sizes[i], boundary_every, l2_scale), range(shards)))
    res = CampaignResult(name, n_samples, seed)
    index = 0
    for part in parts:
        for case, chk in part:
            res.worst_margin = min(res.worst_margin, chk.rhs - chk.lhs)
            if not chk.holds:
                res.violations += 1
                if witness_dir is not None and len(res.witnesses) < max_witnesses:
                    res.witnesses.append(write_witness(witness_dir, name, seed, index, case, chk, l2_scale))
            index += 1
    return res


# -- bound helpers -----------------------------------------------------------


def linear_rate_bound(K, gap0: float, d_star0: float, gamma: float, eta0: float, vartheta: float,
                      eps_actor: float = 0.0, eps_critic: float = 0.0,
                      constants: TheoryConstants | None = None):
    """``(1 - 1/vt)^K (gap0 + D0 / ((1-gamma) eta0 (vt-1))) + (vt^2 psi(eps_a) + 2 vt eps_c) / (1-gamma)``."""
    if not vartheta > 1:
        raise DomainError("vartheta must exceed 1")
    K = np.asarray(K, dtype=float)
    head = (1.0 - 1.0 / vartheta) ** K * (gap0 + d_star0 / ((1.0 - gamma) * eta0 * (vartheta - 1.0)))
    return head + error_floor(gamma, vartheta, eps_actor, eps_critic, constants)


def error_floor(gamma: float, vartheta: float, eps_actor: float = 0.0, eps_critic: float = 0.0,
                constants: TheoryConstants | None = None) -> float:
    psi = 0.0 if constants is None else float(constants.psi(eps_actor))
    return (vartheta ** 2 * psi + 2.0 * vartheta * eps_critic) / (1.0 - gamma)


def omega_scaling(kind: str, etas=(0.25, 0.5, 1.0, 2.0, 4.0), seed: int = 0, n_states: int = 4,
                  n_actions: int = 3) -> float:
    """Log-log slope of the actor loss in ``eta`` with the actor frozen at ``grad Phi(pi_k)``.

    The entropic loss keeps an ``eta``-free term ``-mean log pi_k(a*)`` once the
    target is greedy; it is subtracted before the fit, and ``Q`` is given a
    wide gap at one action per state so the target is greedy for every ``eta``.
    """
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(n_actions), n_states)
    q = rng.uniform(0.0, 1.0, (n_states, n_actions))
    rows = np.arange(n_states)
    best = rng.integers(n_actions, size=n_states)
    if kind == "l2":
        vals = [X.loss_dapo_l2(pi, X.ActorTarget.euclidean(pi, q, e)) for e in etas]
    elif kind == "kl":
        q[rows, best] -= 40.0
        q -= q.min()
        intercept = float(np.mean(np.log(pi[rows, best])))
        vals = [X.loss_dapo_kl(np.log(pi), X.ActorTarget.entropic(np.log(pi), q, e)) - intercept
                for e in etas]
    else:
        raise DomainError("kind must be 'l2' or 'kl'")
    slope, _ = np.polyfit(np.log(etas), np.log(vals), 1)
    return float(slope)


def campaign_names() -> list[str]:
    return list(LEMMAS)
