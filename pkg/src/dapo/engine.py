"""
The actor-critic loop: critic evaluation, actor fit in the dual space,
projection back to policies, and per-iteration diagnostics.

Policies of the entropy maps are tracked through their log-probabilities
(``log_softmax`` of the actor outputs), so geometric step sizes in the
millions never underflow the update.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import log_softmax

from . import approx as X
from .errors import ConfigError, DomainError
from .mdp import (
    TabularMdp,
    check_distribution,
    evaluate,
    evaluate_regularized,
    solve_optimal,
    solve_optimal_regularized,
    uniform_distribution,
    uniform_policy,
    visitation,
)
from .mirror_maps import MirrorMap, Variant, project_simplex

ETA_CAP = 1e8
SATURATE = float(np.finfo(float).max)
LOG_SATURATE = math.log(SATURATE)

CSV_COLUMNS = ("k", "eta", "value_gap", "actor_loss", "critic_err", "kl_prev", "d_star",
               "vartheta_hat", "c_rho_hat")


@dataclass(frozen=True)
class Algorithm:
    mirror: Variant
    loss: str


ALGORITHMS = {
    "dapo_kl": Algorithm(Variant.NEGENT_SIMPLEX, "dapo_kl"),
    "dapo_klstar": Algorithm(Variant.NEGENT_ORTHANT, "dapo_klstar"),
    "dapo_l2": Algorithm(Variant.SQUARED_L2, "dapo_l2"),
    "ampo": Algorithm(Variant.NEGENT_SIMPLEX, "ampo"),
    "ampo_v2": Algorithm(Variant.NEGENT_SIMPLEX, "ampo_v2"),
    "mampo": Algorithm(Variant.NEGENT_SIMPLEX, "mampo"),
    "sac": Algorithm(Variant.NEGENT_SIMPLEX, "dapo_kl"),
}


# -- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``eta_k``.

    ``kind="geometric"`` gives ``eta0 * ratio**k`` (capped at ``ETA_CAP``) and
    needs ``eta0 > 1`` and ``ratio >= vartheta / (vartheta - 1)``;
    ``kind="constant"`` gives ``eta0``. Unset ``vartheta`` and ``ratio`` are
    filled in by :meth:`resolve`.
    """

    kind: str = "geometric"
    eta0: float = 2.0
    ratio: float | None = None
    vartheta: float | None = None

    def __post_init__(self):
        if self.kind not in ("geometric", "constant"):
            raise ConfigError(f"schedule.kind must be 'geometric' or 'constant', got {self.kind!r}")
        if not (self.eta0 > 0 and math.isfinite(self.eta0)):
            raise ConfigError("schedule.eta0 must be positive and finite")
        if self.vartheta is not None and not self.vartheta >= 1:
            raise ConfigError("schedule.vartheta must be >= 1")
        if self.ratio is not None and not self.ratio >= 1:
            raise ConfigError("schedule.ratio must be >= 1")

    def resolve(self, n_states: int, gamma: float) -> "StepSchedule":
        """Fill defaults: ``vartheta = |S| / (1 - gamma)``, ``ratio = vartheta / (vartheta - 1)``."""
        vt = self.vartheta if self.vartheta is not None else n_states / (1.0 - gamma)
        ratio = self.ratio
        if ratio is None and self.kind == "geometric":
            if vt <= 1:
                raise ConfigError("a geometric schedule needs vartheta > 1 to derive its ratio")
            ratio = vt / (vt - 1.0)
        return replace(self, vartheta=vt, ratio=ratio)

    def validate(self) -> None:
        if self.kind != "geometric":
            return
        if not self.eta0 > 1:
            raise ConfigError("a geometric schedule needs eta0 > 1")
        if self.vartheta is None or self.ratio is None:
            raise ConfigError("resolve the schedule before use")
        if self.vartheta <= 1 or self.ratio < self.vartheta / (self.vartheta - 1.0) * (1 - 1e-12):
            raise ConfigError(
                f"geometric ratio {self.ratio} is below vartheta/(vartheta-1) = "
                f"{self.vartheta / (self.vartheta - 1.0) if self.vartheta > 1 else math.inf}")


def schedule_eta(s: StepSchedule, k: int) -> float:
    if k < 0:
        raise ConfigError("iteration index must be nonnegative")
    if s.kind == "constant":
        return float(s.eta0)
    if s.ratio is None:
        raise ConfigError("geometric schedule has no ratio; call resolve() first")
    s.validate()
    # compare in log space so huge k cannot overflow before the cap
    if math.log(s.eta0) + k * math.log(s.ratio) >= math.log(ETA_CAP):
        return ETA_CAP
    return float(min(s.eta0 * s.ratio**k, ETA_CAP))


@dataclass(frozen=True)
class CriticConfig:
    """``exact`` or ``uniform_noise`` critic.

    Noise is i.i.d. uniform on ``[-w, w]`` per ``(s, a)`` with
    ``w = epsilon * (A + 1) / A``: the maximum of ``A`` such magnitudes has
    mean ``w A / (A + 1)``, so ``E ||Qhat_s - Q_s||_inf = epsilon`` for every state.
    """

    mode: str = "exact"
    epsilon: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("exact", "uniform_noise"):
            raise ConfigError(f"critic.mode must be 'exact' or 'uniform_noise', got {self.mode!r}")
        if not self.epsilon >= 0:
            raise ConfigError("critic.epsilon must be nonnegative")
        if (self.mode == "exact") != (self.epsilon == 0):
            raise ConfigError("critic.mode 'exact' holds exactly when critic.epsilon is 0")

    def half_width(self, n_actions: int) -> float:
        return self.epsilon * (n_actions + 1) / n_actions


@dataclass(frozen=True)
class DapoConfig:
    algorithm: str = "dapo_kl"
    approx: str = "tabular"
    hidden: tuple = (32, 32)
    features: str = "onehot"
    feature_dim: int = 8
    schedule: StepSchedule = field(default_factory=StepSchedule)
    critic: CriticConfig = field(default_factory=CriticConfig)
    actor_mode: str = "sgd"
    actor_steps: int = 1
    actor_lr: float = 0.1
    actor_batch: int | None = None
    iterations: int = 50
    tau: float = 0.0
    rho: tuple | None = None
    weighting: str = "visitation"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.rho is not None:
            object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {', '.join(ALGORITHMS)}")
        if self.approx not in ("tabular", "linear", "mlp"):
            raise ConfigError(f"approx must be tabular, linear or mlp, got {self.approx!r}")
        if self.features not in ("onehot", "random"):
            raise ConfigError("features must be 'onehot' or 'random'")
        if self.actor_mode not in ("sgd", "exact"):
            raise ConfigError("actor_mode must be 'sgd' or 'exact'")
        if self.actor_mode == "exact" and self.approx != "tabular":
            raise ConfigError("exact actor minimization is available for the tabular approximator only")
        if self.actor_steps < 1:
            raise ConfigError("actor_steps must be >= 1")
        if not self.actor_lr > 0:
            raise ConfigError("actor_lr must be positive")
        if self.actor_batch is not None and self.actor_batch < 1:
            raise ConfigError("actor_batch must be >= 1 when set")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.tau < 0:
            raise ConfigError("tau must be nonnegative")
        if self.algorithm == "sac" and self.tau <= 0:
            raise ConfigError("the sac algorithm needs tau > 0")
        if self.weighting not in ("visitation", "uniform"):
            raise ConfigError("weighting must be 'visitation' or 'uniform'")
        if any(h < 1 for h in self.hidden) or self.feature_dim < 1:
            raise ConfigError("layer widths and feature_dim must be positive")

    @property
    def mirror(self) -> MirrorMap:
        return MirrorMap(ALGORITHMS[self.algorithm].mirror)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["rho"] = None if self.rho is None else list(self.rho)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DapoConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run settings: {', '.join(sorted(unknown))}")
        try:
            if isinstance(d.get("schedule"), dict):
                d["schedule"] = StepSchedule(**d["schedule"])
            if isinstance(d.get("critic"), dict):
                d["critic"] = CriticConfig(**d["critic"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# -- diagnostics ------------------------------------------------------------------


@dataclass(frozen=True)
class Constants:
    vartheta: float
    c_rho: float
    c_rho_full: float


def _sup_ratio(a: np.ndarray, b: np.ndarray) -> float:
    """``max(a / b)`` over ``a > 0``; a zero denominator saturates."""
    mask = a > 0
    if not np.any(mask):
        return 0.0
    if np.any(b[mask] <= 0):
        return SATURATE
    return float(min(np.max(a[mask] / b[mask]), SATURATE))


def _sup_log_ratio(logp: np.ndarray, logq: np.ndarray) -> np.ndarray:
    """Per-state ``max_a p / q`` over ``p > 0`` from log-probabilities, saturating."""
    with np.errstate(invalid="ignore"):
        diff = np.where(np.isneginf(logp), -np.inf, logp - logq)
    m = np.max(diff, axis=1)
    return np.where(m >= LOG_SATURATE, SATURATE, np.exp(np.minimum(m, LOG_SATURATE)))


def _log_policy(pi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(pi)


def transition_constants(mdp: TabularMdp, pi_next, pi_k, pi_star, rho, nu, d_star=None,
                         log_pi_next=None, log_pi_k=None, log_pi_star=None) -> Constants:
    """The distribution-mismatch and policy-ratio terms for one update ``pi_k -> pi_next``."""
    if d_star is None:
        d_star = visitation(mdp, pi_star, rho)
    d_next = visitation(mdp, pi_next, rho)
    d_next_star = visitation(mdp, pi_next, d_star)
    vartheta = max(_sup_ratio(d_star, d_next), _sup_ratio(d_next, nu),
                   _sup_ratio(d_next_star, nu), _sup_ratio(d_next_star, d_star))
    lp_next = _log_policy(pi_next) if log_pi_next is None else log_pi_next
    lp_k = _log_policy(pi_k) if log_pi_k is None else log_pi_k
    lp_star = _log_policy(pi_star) if log_pi_star is None else log_pi_star
    per_state = np.maximum(_sup_log_ratio(lp_star, lp_next), _sup_log_ratio(lp_k, lp_next))
    support = nu > 0
    c_rho = float(np.max(per_state[support])) if np.any(support) else 0.0
    return Constants(max(vartheta, 1.0), c_rho, float(np.max(per_state)))


def estimate_constants(mdp: TabularMdp, policies, pi_star, rho, weights=None) -> Constants:
    """Maxima over a run of the mismatch coefficient and the policy-ratio constant.

    ``weights[k]`` is the training distribution of update ``k``; the visitation
    distribution of ``policies[k]`` when omitted.
    """
    rho = check_distribution(mdp, rho)
    d_star = visitation(mdp, pi_star, rho)
    best = Constants(1.0, 0.0, 0.0)
    for k in range(len(policies) - 1):
        nu = visitation(mdp, policies[k], rho) if weights is None else np.asarray(weights[k])
        c = transition_constants(mdp, policies[k + 1], policies[k], pi_star, rho, nu, d_star)
        best = Constants(max(best.vartheta, c.vartheta), max(best.c_rho, c.c_rho),
                         max(best.c_rho_full, c.c_rho_full))
    return best


def _kl_rows(p: np.ndarray, logp: np.ndarray, logq: np.ndarray) -> np.ndarray:
    """Per-row ``KL(p || q)`` from log-probabilities, with ``0 log 0 = 0``."""
    with np.errstate(invalid="ignore"):
        terms = np.where(p > 0, p * (logp - logq), 0.0)
    # a divergence is nonnegative; clip roundoff
    return np.maximum(np.sum(terms, axis=1), 0.0)


# -- the run log --------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class IterationLog:
    """Per-iteration records plus the policies and training weights of the run."""

    records: list
    policies: list
    weights: list
    config: dict
    meta: dict
    pi_star: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"config": self.config, "seed": self.config.get("seed"), "meta": self.meta,
               "records": [{k: (None if v is None else (v if isinstance(v, int) else float(v)))
                            for k, v in r.items()} for r in self.records]}
        return json.dumps(doc, indent=1, allow_nan=False) + "\n"

    def save(self, csv_path=None, json_path=None) -> None:
        """Write the CSV and/or JSON form, creating parent directories."""
        for path, text in ((csv_path, self.to_csv), (json_path, self.to_json)):
            if path is None:
                continue
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text())


# -- building blocks ------------------------------------------------------------------


def seed_stream(seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 stream ``index`` derived from a master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(index,))))


STREAM_CRITIC, STREAM_ACTOR, STREAM_INIT = 0, 1, 2


def build_approx(cfg: DapoConfig, mdp: TabularMdp, pi0: np.ndarray, state_features=None) -> X.ApproxFunction:
    """The initial actor; tabular kinds start at ``grad Phi(pi0)``."""
    S, A = mdp.n_states, mdp.n_actions
    start = pi0 if cfg.mirror.variant is Variant.SQUARED_L2 else _log_policy(pi0)
    if cfg.approx == "tabular":
        if not np.all(np.isfinite(start)):
            raise ConfigError("a tabular entropy actor needs a strictly positive initial policy")
        return X.Tabular(S, A, start.ravel())
    rng = seed_stream(cfg.seed, STREAM_INIT)
    if cfg.approx == "linear":
        if cfg.features == "onehot":
            f = X.linear_onehot(S, A)
            return f.with_theta(np.where(np.isfinite(start), start, 0.0).ravel())
        feats = rng.normal(size=(S, A, cfg.feature_dim)) / math.sqrt(cfg.feature_dim)
        return X.LinearFeatures(feats)
    feats = np.eye(S) if state_features is None else np.asarray(state_features, dtype=float)
    return X.Mlp(feats, A, cfg.hidden, seed=int(rng.integers(2**63)))


def _actor_loss(name: str, log_pi, pi, F_k, qhat, eta, w) -> X.ActorLoss:
    if name == "dapo_kl":
        return X.dapo_kl_loss(X.ActorTarget.entropic(log_pi, qhat, eta, w))
    if name == "dapo_klstar":
        return X.dapo_klstar_loss(X.ActorTarget.entropic(log_pi, qhat, eta, w))
    if name == "dapo_l2":
        return X.dapo_l2_loss(X.ActorTarget.euclidean(pi, qhat, eta, w))
    if name == "ampo":
        if not np.all(np.isfinite(log_pi)):
            raise DomainError("AMPO needs a strictly positive policy")
        return X.ActorLoss("squared", log_pi - eta * qhat, w)
    if name == "ampo_v2":
        return X.ampo_v2_loss(F_k, qhat, eta, w)
    return X.mampo_loss(pi, qhat, eta, w)


def _project(mirror: MirrorMap, F: np.ndarray):
    """Policy from actor outputs, with its log-probabilities."""
    if mirror.variant is Variant.SQUARED_L2:
        pi = project_simplex(F)
        return pi, _log_policy(pi)
    # softmax for the simplex map; exp then l1-normalize for the orthant map
    log_pi = log_softmax(F, axis=1)
    return np.exp(log_pi), log_pi


def _actor_divergence(mirror: MirrorMap, F, pi_k, log_pi_k, qhat, eta, w) -> float:
    """``E_w[D(grad Phi*(F_s), grad Phi*(grad Phi(pi_k) - eta qhat))]`` on the simplex."""
    if mirror.variant is Variant.SQUARED_L2:
        diff = F - (pi_k - eta * qhat)
        return float(w @ (0.5 * np.sum(diff * diff, axis=1)))
    logp = log_softmax(F, axis=1)
    logt = log_softmax(log_pi_k - eta * qhat, axis=1)
    per_state = _kl_rows(np.exp(logp), logp, logt)
    per_state = np.where(w > 0, per_state, 0.0)
    return float(w @ per_state)


def _bregman_rows(mirror: MirrorMap, p, logp, q, logq) -> np.ndarray:
    if mirror.variant is Variant.SQUARED_L2:
        return 0.5 * np.sum((p - q) ** 2, axis=1)
    return _kl_rows(p, logp, logq)


# -- the loop ---------------------------------------------------------------------


def _run(mdp: TabularMdp, cfg: DapoConfig, schedule: StepSchedule, regularized: bool,
         initial_policy, state_features) -> IterationLog:
    S, A = mdp.n_states, mdp.n_actions
    mirror = cfg.mirror
    omega = 2 if mirror.variant is Variant.SQUARED_L2 else 1
    rho = uniform_distribution(mdp) if cfg.rho is None else check_distribution(mdp, np.array(cfg.rho))
    tau = cfg.tau

    if regularized:
        pi_star, val_star = solve_optimal_regularized(mdp, tau)
    else:
        pi_star, val_star = solve_optimal(mdp)
    v_star = float(rho @ val_star.v)
    d_star = visitation(mdp, pi_star, rho)
    log_pi_star = _log_policy(pi_star)

    def evaluate_policy(pi):
        return evaluate_regularized(mdp, pi, tau) if regularized else evaluate(mdp, pi)

    pi = uniform_policy(mdp) if initial_policy is None else np.array(initial_policy, dtype=float)
    pi = pi / pi.sum(axis=1, keepdims=True)
    log_pi = _log_policy(pi)
    f = build_approx(cfg, mdp, pi, state_features)
    critic_rng = seed_stream(cfg.seed if cfg.critic.seed is None else cfg.critic.seed, STREAM_CRITIC)
    actor_rng = seed_stream(cfg.seed, STREAM_ACTOR)
    half_width = cfg.critic.half_width(A)

    val = evaluate_policy(pi)

    def row(k, eta, actor_loss, critic_err, kl_prev, vt, c, extra):
        r = {"k": k, "eta": eta, "value_gap": float(rho @ val.v) - v_star, "actor_loss": actor_loss,
             "critic_err": critic_err, "kl_prev": kl_prev,
             "d_star": float(d_star @ _bregman_rows(mirror, pi_star, log_pi_star, pi, log_pi)),
             "vartheta_hat": vt, "c_rho_hat": c}
        r.update(extra)
        return r

    records = [row(0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
                   {"value": float(rho @ val.v), "actor_div": 0.0, "eps_actor_hat": 0.0,
                    "c_rho_full_hat": 0.0, "sac_grad_gap": None})]
    policies, weights = [pi.copy()], []
    vt_hat, c_hat, c_full_hat = 1.0, 0.0, 0.0

    for k in range(cfg.iterations):
        eta = schedule_eta(schedule, k)
        nu = visitation(mdp, pi, rho) if cfg.weighting == "visitation" else uniform_distribution(mdp)
        qhat = val.q
        if half_width > 0:
            qhat = qhat + critic_rng.uniform(-half_width, half_width, size=qhat.shape)
        critic_err = float(nu @ np.max(np.abs(qhat - val.q), axis=1))

        loss = _actor_loss(ALGORITHMS[cfg.algorithm].loss, log_pi, pi, f.outputs(), qhat, eta, nu)
        sac_gap = None
        if regularized and abs(eta * tau - 1.0) <= 1e-12:
            sac_gap = _sac_gradient_gap(loss, f, log_pi, qhat, tau, nu)
        if cfg.actor_mode == "exact":
            f = f.with_theta(loss.minimizer().ravel())
            actor_loss = loss.value(f.outputs())
        else:
            f, actor_loss = X.sgd_minimize(loss, f, cfg.actor_steps, cfg.actor_lr, cfg.actor_batch,
                                           actor_rng if cfg.actor_batch is not None else None)
        F = f.outputs()
        actor_div = _actor_divergence(mirror, F, pi, log_pi, qhat, eta, nu)
        pi_next, log_pi_next = _project(mirror, F)
        kl_prev = float(nu @ _bregman_rows(mirror, pi_next, log_pi_next, pi, log_pi))

        c = transition_constants(mdp, pi_next, pi, pi_star, rho, nu, d_star,
                                 log_pi_next, log_pi, log_pi_star)
        vt_hat, c_hat, c_full_hat = max(vt_hat, c.vartheta), max(c_hat, c.c_rho), max(c_full_hat, c.c_rho_full)

        pi, log_pi = pi_next, log_pi_next
        val = evaluate_policy(pi)
        records.append(row(k + 1, eta, actor_loss, critic_err, kl_prev, vt_hat, c_hat,
                           {"value": float(rho @ val.v), "actor_div": actor_div,
                            "eps_actor_hat": actor_div / eta**omega, "c_rho_full_hat": c_full_hat,
                            "sac_grad_gap": sac_gap}))
        policies.append(pi.copy())
        weights.append(nu)

    meta = {"n_states": S, "n_actions": A, "gamma": mdp.discount, "v_star": v_star,
            "eta0": schedule_eta(schedule, 0), "schedule": asdict(schedule),
            "mirror": mirror.variant.value, "omega": omega, "regularized": regularized,
            "critic_half_width": half_width, "rho": rho.tolist()}
    return IterationLog(records, policies, weights, cfg.to_dict(), meta, pi_star)


def _sac_gradient_gap(loss: X.ActorLoss, f: X.ApproxFunction, log_pi, qhat, tau, w) -> float:
    """Gap between the soft-q loss gradient and ``tau`` times the KL-loss gradient.

    Relative to the larger norm, floored at 1: near the fixed point both
    gradients vanish and a plain ratio would only measure roundoff.
    """
    soft = X.ActorLoss("sac", qhat - tau * log_pi, w, tau)
    _, g_sac = X.loss_gradient(soft, f)
    _, g_kl = X.loss_gradient(loss, f)
    scale = max(np.linalg.norm(g_sac), np.linalg.norm(tau * g_kl), 1.0)
    return float(np.linalg.norm(g_sac - tau * g_kl) / scale)


def run_dapo(mdp: TabularMdp, cfg: DapoConfig, initial_policy=None, state_features=None) -> IterationLog:
    """Unregularized run; returns records for ``k = 0 .. iterations``."""
    if cfg.tau > 0:
        raise ConfigError("tau > 0 runs go through run_sac_mode")
    schedule = cfg.schedule.resolve(mdp.n_states, mdp.discount)
    schedule.validate()
    return _run(mdp, cfg, schedule, False, initial_policy, state_features)


def run_sac_mode(mdp: TabularMdp, cfg: DapoConfig, initial_policy=None, state_features=None) -> IterationLog:
    """Entropy-regularized run with a constant step ``eta <= 1 / (tau vartheta)``.

    An unset ``schedule.vartheta`` is taken as 1, which admits the SAC step
    ``eta = 1 / tau``.
    """
    if not cfg.tau > 0:
        raise ConfigError("run_sac_mode needs tau > 0")
    if ALGORITHMS[cfg.algorithm].loss != "dapo_kl":
        raise ConfigError("run_sac_mode pairs with the dapo_kl or sac algorithm")
    s = cfg.schedule
    if s.kind != "constant":
        raise ConfigError("run_sac_mode needs a constant schedule")
    vt = 1.0 if s.vartheta is None else s.vartheta
    if s.eta0 > 1.0 / (cfg.tau * vt) * (1 + 1e-12):
        raise ConfigError(f"eta = {s.eta0} exceeds 1/(tau vartheta) = {1.0 / (cfg.tau * vt)}")
    return _run(mdp, cfg, replace(s, vartheta=vt), True, initial_policy, state_features)


def run(mdp: TabularMdp, cfg: DapoConfig, initial_policy=None, state_features=None) -> IterationLog:
    """Dispatch on ``tau``: regularized runs use :func:`run_sac_mode`."""
    if cfg.tau > 0:
        return run_sac_mode(mdp, cfg, initial_policy, state_features)
    return run_dapo(mdp, cfg, initial_policy, state_features)
