"""
Parametrized dual-space functions and the actor losses fitted to them.

An :class:`ApproxFunction` maps the parameter vector ``theta`` to an output
matrix ``F[s, a]`` (a logit / dual vector per state). Losses are written in
terms of ``F`` and return ``dL/dF``; :meth:`ApproxFunction.backward` pulls that
back to ``dL/dtheta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import Divergence, DomainError

KLSTAR_MAX_LOGIT = 300.0


class ApproxFunction:
    """Base class: subclasses implement ``forward`` and ``backward``."""

    kind = "base"

    def __init__(self, n_states: int, n_actions: int, theta: np.ndarray):
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        theta = np.array(theta, dtype=float).ravel()
        if theta.size != self.n_params:
            raise DomainError(f"{self.kind} needs {self.n_params} parameters, got {theta.size}")
        self.theta = theta

    @property
    def n_params(self) -> int:
        raise NotImplementedError

    def forward(self, rows=None):
        """Outputs for the selected states and a cache for :meth:`backward`."""
        raise NotImplementedError

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def outputs(self, rows=None) -> np.ndarray:
        return self.forward(rows)[0]

    def eval_f(self, state: int, action: int) -> float:
        if not (0 <= state < self.n_states and 0 <= action < self.n_actions):
            raise IndexError(f"(state, action) = ({state}, {action}) out of range")
        return float(self.outputs([state])[0, action])

    def with_theta(self, theta) -> "ApproxFunction":
        clone = self.copy()
        clone.theta = np.array(theta, dtype=float).ravel()
        if clone.theta.size != self.n_params:
            raise DomainError("parameter count mismatch")
        return clone

    def copy(self) -> "ApproxFunction":
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        doc = {"kind": self.kind, "spec": self.spec(), "theta": self.theta.tolist()}
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text: str) -> "ApproxFunction":
        doc = json.loads(text)
        spec, theta = doc["spec"], doc["theta"]
        if doc["kind"] == "tabular":
            return Tabular(spec["n_states"], spec["n_actions"], theta)
        if doc["kind"] == "linear":
            return LinearFeatures(np.array(spec["features"]), theta)
        if doc["kind"] == "mlp":
            return Mlp(np.array(spec["state_features"]), spec["n_actions"], tuple(spec["hidden"]),
                       theta=theta)
        raise DomainError(f"unknown approximator kind {doc['kind']!r}")


def _rows(rows, n):
    return np.arange(n) if rows is None else np.asarray(rows)


class Tabular(ApproxFunction):
    """One free parameter per ``(s, a)``: ``F[s, a] = theta[s * A + a]``."""

    kind = "tabular"

    def __init__(self, n_states: int, n_actions: int, theta=None):
        if theta is None:
            theta = np.zeros(n_states * n_actions)
        super().__init__(n_states, n_actions, theta)

    @property
    def n_params(self):
        return self.n_states * self.n_actions

    def forward(self, rows=None):
        rows = _rows(rows, self.n_states)
        return self.theta.reshape(self.n_states, self.n_actions)[rows], rows

    def backward(self, rows, dout):
        g = np.zeros((self.n_states, self.n_actions))
        np.add.at(g, rows, dout)
        return g.ravel()

    def copy(self):
        return Tabular(self.n_states, self.n_actions, self.theta.copy())

    def spec(self):
        return {"n_states": self.n_states, "n_actions": self.n_actions}


class LinearFeatures(ApproxFunction):
    """``F[s, a] = <phi[s, a], theta>`` for a fixed feature tensor of shape (S, A, d)."""

    kind = "linear"

    def __init__(self, features: np.ndarray, theta=None):
        self.features = np.asarray(features, dtype=float)
        if self.features.ndim != 3:
            raise DomainError("linear features must have shape (S, A, d)")
        S, A, d = self.features.shape
        super().__init__(S, A, np.zeros(d) if theta is None else theta)

    @property
    def n_params(self):
        return self.features.shape[2]

    def forward(self, rows=None):
        rows = _rows(rows, self.n_states)
        return self.features[rows] @ self.theta, rows

    def backward(self, rows, dout):
        return np.einsum("sa,sad->d", dout, self.features[rows])

    def copy(self):
        return LinearFeatures(self.features, self.theta.copy())

    def spec(self):
        return {"features": self.features.tolist()}


class Mlp(ApproxFunction):
    """State features -> tanh hidden layers -> one output per action.

    Weights and biases of a layer with fan-in ``m`` are drawn uniformly from
    ``[-1/sqrt(m), 1/sqrt(m)]`` using ``seed``.
    """

    kind = "mlp"

    def __init__(self, state_features: np.ndarray, n_actions: int, hidden=(32, 32), seed: int = 0,
                 theta=None):
        self.state_features = np.asarray(state_features, dtype=float)
        if self.state_features.ndim != 2:
            raise DomainError("MLP state features must have shape (S, d_in)")
        self.widths = (self.state_features.shape[1], *[int(h) for h in hidden], int(n_actions))
        if theta is None:
            rng = np.random.default_rng(seed)
            parts = []
            for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out + fan_out))
            theta = np.concatenate(parts)
        super().__init__(self.state_features.shape[0], n_actions, theta)

    @property
    def hidden(self):
        return self.widths[1:-1]

    @property
    def n_params(self):
        return sum(m * n + n for m, n in zip(self.widths[:-1], self.widths[1:]))

    def _layers(self):
        out, i = [], 0
        for m, n in zip(self.widths[:-1], self.widths[1:]):
            W = self.theta[i:i + m * n].reshape(m, n)
            b = self.theta[i + m * n:i + m * n + n]
            out.append((W, b))
            i += m * n + n
        return out

    def forward(self, rows=None):
        rows = _rows(rows, self.n_states)
        layers = self._layers()
        acts = [self.state_features[rows]]
        for W, b in layers[:-1]:
            acts.append(np.tanh(acts[-1] @ W + b))
        W, b = layers[-1]
        return acts[-1] @ W + b, acts

    def backward(self, acts, dout):
        layers = self._layers()
        grads = []
        delta = dout
        for j in range(len(layers) - 1, -1, -1):
            W, _ = layers[j]
            grads.append((delta.sum(axis=0), acts[j].T @ delta))
            if j > 0:
                delta = (delta @ W.T) * (1.0 - acts[j] ** 2)
        flat = []
        for db, dW in reversed(grads):
            flat.append(dW.ravel())
            flat.append(db)
        return np.concatenate(flat)

    def copy(self):
        return Mlp(self.state_features, self.n_actions, self.hidden, theta=self.theta.copy())

    def spec(self):
        return {"state_features": self.state_features.tolist(), "n_actions": self.n_actions,
                "hidden": list(self.hidden), "activation": "tanh"}


def linear_onehot(n_states: int, n_actions: int) -> LinearFeatures:
    """Linear approximator with one-hot features; equivalent to the tabular class."""
    return LinearFeatures(np.eye(n_states * n_actions).reshape(n_states, n_actions, -1))


# -- losses -----------------------------------------------------------------------


def _weights(weights, n_states):
    if weights is None:
        return np.full(n_states, 1.0 / n_states)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n_states,) or np.any(w < 0):
        raise DomainError("weights must be a nonnegative vector with one entry per state")
    return w


@dataclass(frozen=True)
class ActorTarget:
    """Dual-space target ``grad Phi(pi_k) - eta * qhat`` and state weights.

    For the entropy maps ``dual`` is ``log pi_k - eta * qhat``: its softmax is
    the normalized primal target, and ``exp(dual)`` the unnormalized one.
    """

    dual: np.ndarray
    weights: np.ndarray

    @classmethod
    def entropic(cls, log_pi_k, qhat, eta, weights=None):
        log_pi_k = np.asarray(log_pi_k, dtype=float)
        return cls(log_pi_k - eta * np.asarray(qhat, dtype=float), _weights(weights, log_pi_k.shape[0]))

    @classmethod
    def euclidean(cls, pi_k, qhat, eta, weights=None):
        pi_k = np.asarray(pi_k, dtype=float)
        return cls(pi_k - eta * np.asarray(qhat, dtype=float), _weights(weights, pi_k.shape[0]))

    @property
    def log_primal(self) -> np.ndarray:
        return log_softmax(self.dual, axis=1)

    @property
    def primal(self) -> np.ndarray:
        return softmax(self.dual, axis=1)


@dataclass(frozen=True)
class ActorLoss:
    """Weighted sum over states of a per-state loss of the output row ``F_s``.

    ``form`` selects the per-state loss and the meaning of ``target``:

    * ``"squared"``: ``||F_s - target_s||^2``;
    * ``"kl"``: ``KL(softmax(F_s) || exp(target_s))`` with ``target`` a normalized log-policy;
    * ``"klstar"``: unnormalized KL between ``exp(F_s)`` and ``exp(target_s)``;
    * ``"sac"``: ``<p, tau log p + target_s>`` with ``p = softmax(F_s)`` and ``target`` the soft Q.
    """

    form: str
    target: np.ndarray
    weights: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        if self.form not in ("squared", "kl", "klstar", "sac"):
            raise DomainError(f"unknown loss form {self.form!r}")
        active = self.weights > 0
        if self.form in ("kl", "sac") and not np.all(np.isfinite(self.target[active])):
            raise DomainError("target has zero-probability entries on weighted states")

    def value_and_grad(self, F: np.ndarray, rows=None, scale: float = 1.0):
        """Loss over ``rows`` (all states when None) and its gradient w.r.t. ``F``."""
        rows = np.arange(self.target.shape[0]) if rows is None else np.asarray(rows)
        w = self.weights[rows] * scale
        # Zero-weight states may carry -inf log-targets; they must not poison the sum.
        T = np.where(w[:, None] > 0, self.target[rows], 0.0)
        if self.form == "squared":
            diff = F - T
            per_state = np.sum(diff * diff, axis=1)
            dF = 2.0 * diff
        elif self.form == "kl":
            logp = log_softmax(F, axis=1)
            p = np.exp(logp)
            g = logp - np.where(p > 0, T, 0.0)
            per_state = np.sum(p * g, axis=1)
            dF = p * (g - per_state[:, None])
        elif self.form == "klstar":
            if np.any(F > KLSTAR_MAX_LOGIT):
                raise Divergence(f"KL* logits exceed {KLSTAR_MAX_LOGIT}; exp would overflow")
            eF = np.exp(F)
            per_state = np.sum(eF * (F - T) - eF + np.exp(T), axis=1)
            dF = eF * (F - T)
        else:
            logp = log_softmax(F, axis=1)
            p = np.exp(logp)
            g = self.tau * logp + T
            per_state = np.sum(p * g, axis=1)
            dF = p * (g - per_state[:, None])
        return float(w @ per_state), w[:, None] * dF

    def value(self, F: np.ndarray) -> float:
        return self.value_and_grad(F)[0]

    def minimizer(self) -> np.ndarray:
        """An output matrix attaining the minimum (exact for the tabular class)."""
        if self.form == "sac":
            return -self.target / self.tau
        return self.target.copy()


def _as_outputs(f) -> np.ndarray:
    if isinstance(f, ApproxFunction):
        return f.outputs()
    return np.atleast_2d(np.asarray(f, dtype=float))


def _positive_log(pi):
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise DomainError("policy must be strictly positive")
    return np.log(pi)


def dapo_kl_loss(target: ActorTarget) -> ActorLoss:
    return ActorLoss("kl", target.log_primal, target.weights)


def dapo_klstar_loss(target: ActorTarget) -> ActorLoss:
    return ActorLoss("klstar", target.dual, target.weights)


def dapo_l2_loss(target: ActorTarget) -> ActorLoss:
    return ActorLoss("squared", target.dual, target.weights)


def ampo_loss(pi_k, qhat, eta, weights=None) -> ActorLoss:
    log_pi = _positive_log(pi_k)
    return ActorLoss("squared", log_pi - eta * np.asarray(qhat), _weights(weights, log_pi.shape[0]))


def ampo_v2_loss(f_k, qhat, eta, weights=None) -> ActorLoss:
    Fk = _as_outputs(f_k)
    return ActorLoss("squared", Fk - eta * np.asarray(qhat), _weights(weights, Fk.shape[0]))


def mampo_loss(pi_k, qhat, eta, weights=None) -> ActorLoss:
    pi_k = np.asarray(pi_k, dtype=float)
    return ActorLoss("squared", pi_k - eta * np.asarray(qhat), _weights(weights, pi_k.shape[0]))


def sac_loss(pi_k, soft_q, tau, weights=None) -> ActorLoss:
    if not tau > 0:
        raise DomainError("tau must be positive")
    _positive_log(pi_k)
    q = np.atleast_2d(np.asarray(soft_q, dtype=float))
    return ActorLoss("sac", q, _weights(weights, q.shape[0]), float(tau))


def loss_dapo_kl(f, target: ActorTarget) -> float:
    """``E_s[KL(softmax(f_s) || softmax(target.dual_s))]``."""
    return dapo_kl_loss(target).value(_as_outputs(f))


def loss_dapo_klstar(f, target: ActorTarget) -> float:
    return dapo_klstar_loss(target).value(_as_outputs(f))


def loss_dapo_l2(f, target: ActorTarget) -> float:
    return dapo_l2_loss(target).value(_as_outputs(f))


def loss_ampo(f, pi_k, qhat, eta, weights=None) -> float:
    return ampo_loss(pi_k, qhat, eta, weights).value(_as_outputs(f))


def loss_ampo_v2(f, f_k, qhat, eta, weights=None) -> float:
    return ampo_v2_loss(f_k, qhat, eta, weights).value(_as_outputs(f))


def loss_mampo(f, pi_k, qhat, eta, weights=None) -> float:
    return mampo_loss(pi_k, qhat, eta, weights).value(_as_outputs(f))


def loss_sac(f, pi_k, soft_q, tau, weights=None) -> float:
    return sac_loss(pi_k, soft_q, tau, weights).value(_as_outputs(f))


def loss_gradient(loss: ActorLoss, f: ApproxFunction, rows=None, scale: float = 1.0):
    """Loss value and its exact gradient w.r.t. ``f.theta``."""
    F, cache = f.forward(rows)
    value, dF = loss.value_and_grad(F, rows, scale)
    return value, f.backward(cache, dF)


def sgd_minimize(loss: ActorLoss, f: ApproxFunction, steps: int, lr: float, batch: int | None = None,
                 rng: np.random.Generator | None = None):
    """Run ``steps`` plain gradient steps from ``f``; returns ``(f_new, final_loss)``.

    With ``batch`` set, each step uses ``batch`` states drawn uniformly with
    replacement from ``rng``, reweighted by ``S / batch`` so the minibatch loss is
    an unbiased estimate of the full loss. The final loss is always full-batch.
    """
    if steps < 1:
        raise DomainError("sgd_minimize needs at least one step")
    if not lr > 0:
        raise DomainError("learning rate must be positive")
    if batch is not None and rng is None:
        raise DomainError("minibatch sampling needs an rng")
    f = f.copy()
    S = f.n_states
    for _ in range(steps):
        if batch is None:
            value, g = loss_gradient(loss, f)
        else:
            rows = rng.integers(S, size=batch)
            value, g = loss_gradient(loss, f, rows, S / batch)
        if not (np.isfinite(value) and np.all(np.isfinite(g))):
            raise Divergence("actor loss became non-finite")
        f.theta = f.theta - lr * g
    final = loss.value(f.outputs())
    if not np.isfinite(final):
        raise Divergence("actor loss became non-finite")
    return f, final
