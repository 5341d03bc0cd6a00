"""
Exact finite-MDP machinery under the cost-minimization convention.

Policies are ``(S, A)`` row-stochastic arrays and state distributions are
length-``S`` probability vectors. All evaluations are direct dense solves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, rel_entr, softmax

from .errors import DomainError, NonConvergence, SingularSystem

ROW_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with transition tensor ``P[s, a, s']`` and costs in [0, 1]."""

    transition: np.ndarray
    cost: np.ndarray
    discount: float

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        c = np.array(self.cost, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DomainError(f"transition must have shape (S, A, S), got {P.shape}")
        if c.shape != P.shape[:2]:
            raise DomainError(f"cost must have shape {P.shape[:2]}, got {c.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL):
            raise DomainError("transition rows must be probability vectors")
        if np.any(c < 0) or np.any(c > 1):
            raise DomainError("costs must lie in [0, 1]")
        if not 0.0 < self.discount < 1.0:
            raise DomainError("discount must lie in (0, 1)")
        P.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TabularMdp):
            return NotImplemented
        return (
            self.discount == other.discount
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.cost, other.cost)
        )


@dataclass(frozen=True)
class ValueEstimate:
    v: np.ndarray
    q: np.ndarray
    tau: float = 0.0


def check_policy(mdp: TabularMdp, pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise DomainError(f"policy must have shape {(mdp.n_states, mdp.n_actions)}, got {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > ROW_TOL):
        raise DomainError("policy rows must be probability vectors")
    return pi


def check_distribution(mdp: TabularMdp, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (mdp.n_states,):
        raise DomainError(f"state distribution must have length {mdp.n_states}")
    if np.any(rho < 0) or abs(rho.sum() - 1.0) > ROW_TOL:
        raise DomainError("state distribution must be a probability vector")
    return rho


def uniform_policy(mdp: TabularMdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def uniform_distribution(mdp: TabularMdp) -> np.ndarray:
    return np.full(mdp.n_states, 1.0 / mdp.n_states)


def policy_transition(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", pi, mdp.transition)


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("linear solve produced non-finite values")
    return x


def _strict_log(pi: np.ndarray) -> np.ndarray:
    if np.any(pi <= 0):
        raise DomainError("entropy-regularized evaluation needs a strictly positive policy")
    return np.log(pi)


def _evaluate_cost(mdp: TabularMdp, pi: np.ndarray, cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    S = mdp.n_states
    P_pi = policy_transition(mdp, pi)
    c_pi = np.sum(pi * cost, axis=1)
    v = _solve(np.eye(S) - mdp.discount * P_pi, c_pi)
    q = cost + mdp.discount * mdp.transition @ v
    return v, q


def evaluate(mdp: TabularMdp, pi) -> ValueEstimate:
    """Exact ``V`` and ``Q`` of a policy from ``(I - gamma P_pi) V = c_pi``."""
    pi = check_policy(mdp, pi)
    v, q = _evaluate_cost(mdp, pi, mdp.cost)
    return ValueEstimate(v, q, 0.0)


def evaluate_regularized(mdp: TabularMdp, pi, tau: float) -> ValueEstimate:
    """Entropy-regularized values with per-step cost ``c(s, a) + tau log pi(a|s)``.

    ``Q_tau`` includes the ``tau log pi`` term of the first action, so
    ``V_tau[s] = <pi_s, Q_tau[s]>``.
    """
    if tau < 0:
        raise DomainError("tau must be nonnegative")
    pi = check_policy(mdp, pi)
    if tau == 0:
        return evaluate(mdp, pi)
    v, q = _evaluate_cost(mdp, pi, mdp.cost + tau * _strict_log(pi))
    return ValueEstimate(v, q, float(tau))


def soft_q(mdp: TabularMdp, pi, tau: float) -> np.ndarray:
    """SAC-convention soft action values ``q_tau = c + gamma P V_tau``."""
    pi = check_policy(mdp, pi)
    if tau == 0:
        return evaluate(mdp, pi).q
    val = evaluate_regularized(mdp, pi, tau)
    return val.q - tau * _strict_log(pi)


def visitation(mdp: TabularMdp, pi, rho) -> np.ndarray:
    """Discounted state-visitation distribution ``(1 - gamma) rho^T (I - gamma P_pi)^-1``."""
    pi = check_policy(mdp, pi)
    rho = check_distribution(mdp, rho)
    P_pi = policy_transition(mdp, pi)
    x = _solve((np.eye(mdp.n_states) - mdp.discount * P_pi).T, rho)
    d = np.maximum((1.0 - mdp.discount) * x, 0.0)
    return d / d.sum()


def policy_gradient(mdp: TabularMdp, pi, rho) -> np.ndarray:
    """Gradient of ``V_rho`` w.r.t. the policy table: ``d_s Q_s / (1 - gamma)``."""
    d = visitation(mdp, pi, rho)
    return d[:, None] * evaluate(mdp, pi).q / (1.0 - mdp.discount)


def bellman_residual(mdp: TabularMdp, pi, v) -> float:
    pi = check_policy(mdp, pi)
    c_pi = np.sum(pi * mdp.cost, axis=1)
    return float(np.max(np.abs(v - c_pi - mdp.discount * policy_transition(mdp, pi) @ v)))


def greedy_policy(q: np.ndarray) -> np.ndarray:
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), np.argmin(q, axis=1)] = 1.0
    return pi


def solve_optimal(mdp: TabularMdp, tol: float = 1e-12, max_sweeps: int = 1_000_000):
    """Optimal deterministic policy and its exact values.

    Value iteration to ``tol`` in sup norm, then greedy policy-iteration
    polishing so the returned values are the exact values of the returned policy.
    """
    gamma = mdp.discount
    v = np.zeros(mdp.n_states)
    for _ in range(max_sweeps):
        v_new = np.min(mdp.cost + gamma * mdp.transition @ v, axis=1)
        done = np.max(np.abs(v_new - v)) <= tol
        v = v_new
        if done:
            break
    else:
        raise NonConvergence(f"value iteration did not reach {tol} in {max_sweeps} sweeps")

    pi = greedy_policy(mdp.cost + gamma * mdp.transition @ v)
    for _ in range(mdp.n_states * mdp.n_actions + 1):
        val = evaluate(mdp, pi)
        q = val.q
        best = np.min(q, axis=1)
        current = np.sum(pi * q, axis=1)
        # Switch only on strict improvement so ties keep the current action.
        improve = current - best > 1e-12 * max(1.0, np.max(np.abs(best)))
        if not np.any(improve):
            break
        pi[improve] = greedy_policy(q[improve])
    residual = np.max(np.abs(val.v - np.min(val.q, axis=1)))
    if residual > 1e-10:
        raise NonConvergence(f"Bellman optimality residual {residual:.3g} exceeds 1e-10")
    return pi, val


def solve_optimal_regularized(mdp: TabularMdp, tau: float, tol: float = 1e-12, max_sweeps: int = 1_000_000):
    """Optimal policy of the entropy-regularized MDP via soft value iteration."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    gamma = mdp.discount
    v = np.zeros(mdp.n_states)
    for _ in range(max_sweeps):
        q = mdp.cost + gamma * mdp.transition @ v
        v_new = -tau * logsumexp(-q / tau, axis=1)
        done = np.max(np.abs(v_new - v)) <= tol
        v = v_new
        if done:
            break
    else:
        raise NonConvergence(f"soft value iteration did not reach {tol} in {max_sweeps} sweeps")
    pi = softmax(-(mdp.cost + gamma * mdp.transition @ v) / tau, axis=1)
    return pi, evaluate_regularized(mdp, pi, tau)


def performance_difference(mdp: TabularMdp, pi, pitilde, rho, expectation: str = "pi") -> float:
    """Right-hand side of the performance difference lemma.

    ``expectation="pi"`` gives ``E_{d^pi}[<Q^pitilde_s, pi_s - pitilde_s>] / (1 - gamma)``,
    ``expectation="pitilde"`` gives ``E_{d^pitilde}[<Q^pi_s, pi_s - pitilde_s>] / (1 - gamma)``.
    Both equal ``V^pi_rho - V^pitilde_rho``.
    """
    return performance_difference_regularized(mdp, pi, pitilde, rho, 0.0, expectation)


def performance_difference_regularized(mdp: TabularMdp, pi, pitilde, rho, tau: float,
                                       expectation: str = "pi") -> float:
    """Entropy-regularized performance difference.

    ``expectation="pi"``: ``E_{d^pi}[<Q^pitilde_tau, pi - pitilde> + tau KL(pi || pitilde)]``;
    ``expectation="pitilde"``: ``E_{d^pitilde}[<Q^pi_tau, pi - pitilde> - tau KL(pitilde || pi)]``;
    both scaled by ``1 / (1 - gamma)``.
    """
    pi = check_policy(mdp, pi)
    pitilde = check_policy(mdp, pitilde)
    if expectation == "pi":
        d = visitation(mdp, pi, rho)
        q = evaluate_regularized(mdp, pitilde, tau).q
        inner = np.sum(q * (pi - pitilde), axis=1)
        if tau > 0:
            inner = inner + tau * np.sum(rel_entr(pi, pitilde), axis=1)
    elif expectation == "pitilde":
        d = visitation(mdp, pitilde, rho)
        q = evaluate_regularized(mdp, pi, tau).q
        inner = np.sum(q * (pi - pitilde), axis=1)
        if tau > 0:
            inner = inner - tau * np.sum(rel_entr(pitilde, pi), axis=1)
    else:
        raise ValueError("expectation must be 'pi' or 'pitilde'")
    return float(d @ inner / (1.0 - mdp.discount))


# -- generators -------------------------------------------------------------


def random_mdp(n_states: int, n_actions: int, gamma: float, seed: int) -> TabularMdp:
    """Dirichlet(1, ..., 1) transition rows and uniform [0, 1] costs.

    Draws come from numpy's PCG64 generator seeded with ``seed``: first the
    transition tensor in C order, then the cost matrix.
    """
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    c = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(P, c, gamma)


GRID_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left


def gridworld(size: int, slip: float, gamma: float, seed: int | None = None) -> TabularMdp:
    """``size x size`` grid with four compass actions and an absorbing goal.

    With probability ``1 - slip`` the chosen move is executed, otherwise one of
    the four moves is taken uniformly at random; moves into a wall stay put.
    Every step costs 1 except at the goal, which costs 0 and is absorbing. The
    goal sits in the bottom-right corner, or in a cell drawn from ``seed``.
    """
    if size < 2:
        raise DomainError("gridworld size must be at least 2")
    if not 0.0 <= slip <= 1.0:
        raise DomainError("slip must lie in [0, 1]")
    S = size * size
    if seed is None:
        goal = S - 1
    else:
        goal = int(np.random.default_rng(seed).integers(S))
    P = np.zeros((S, 4, S))
    c = np.ones((S, 4))
    for s in range(S):
        if s == goal:
            P[s, :, s] = 1.0
            c[s] = 0.0
            continue
        r, col = divmod(s, size)
        nexts = []
        for dr, dc in GRID_MOVES:
            rr, cc = r + dr, col + dc
            nexts.append(rr * size + cc if 0 <= rr < size and 0 <= cc < size else s)
        for a in range(4):
            P[s, a, nexts[a]] += 1.0 - slip
            for t in nexts:
                P[s, a, t] += slip / 4
    return TabularMdp(P, c, gamma)


def grid_features(size: int) -> np.ndarray:
    """Normalized (row, col) coordinates plus a bias column, one row per state."""
    rows, cols = np.divmod(np.arange(size * size), size)
    scale = max(size - 1, 1)
    return np.column_stack([rows / scale, cols / scale, np.ones(size * size)])


# -- serialization -------------------------------------------------------------


def _dump_numbers(obj) -> str:
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump_numbers(o) for o in obj) + "]"
    return format(float(obj), ".17g")


def mdp_to_json(mdp: TabularMdp) -> str:
    """Serialize with every float at 17 significant digits (lossless)."""
    return (
        "{\n"
        f'  "n_states": {mdp.n_states},\n'
        f'  "n_actions": {mdp.n_actions},\n'
        f'  "gamma": {_dump_numbers(mdp.discount)},\n'
        f'  "transition": {_dump_numbers(mdp.transition.tolist())},\n'
        f'  "cost": {_dump_numbers(mdp.cost.tolist())}\n'
        "}\n"
    )


def mdp_from_json(text: str) -> TabularMdp:
    try:
        doc = json.loads(text)
        mdp = TabularMdp(np.array(doc["transition"]), np.array(doc["cost"]), doc["gamma"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DomainError(f"malformed MDP document: {exc}") from exc
    if (doc["n_states"], doc["n_actions"]) != (mdp.n_states, mdp.n_actions):
        raise DomainError("n_states/n_actions disagree with the transition tensor")
    return mdp


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(mdp_to_json(mdp), encoding="utf-8")


def load_mdp(path) -> TabularMdp:
    return mdp_from_json(Path(path).read_text(encoding="utf-8"))
