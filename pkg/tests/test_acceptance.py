"""Desk-scale acceptance checks, one class per criterion.

Run ``pytest tests/test_acceptance.py`` to get the PASS/FAIL table printed
at the end of the session.
"""

import csv
import time
from pathlib import Path

import numpy as np
import pytest
import tomli_w

from dapo import approx as X
from dapo import config as C
from dapo import engine as E
from dapo import theory as T
from dapo.cli import main
from dapo.mdp import random_mdp
from dapo.mirror_maps import MirrorMap, Variant
from oracles import pmd
from test_approx import KINDS, LOSSES, central_difference, make_f, make_loss, rel_err

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
MAPS = [MirrorMap(v) for v in Variant]


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def read_rows(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.criterion(1, title="conjugate identities, 3 maps x 10^4 points, < 5 s")
class TestConjugateSuite:
    def test_identities(self):
        with Timer() as t:
            reports = [T.check_conjugate_identities(m, n_samples=10_000, seed=0) for m in MAPS]
        for r in reports:
            assert r.inverse_err <= 1e-10, r
            assert r.holds(), r
        assert t.seconds < 5.0


@pytest.mark.criterion(2, title="dual Bregman identity, 10^4 pairs per map, < 5 s")
class TestDualBregman:
    def test_identity(self):
        with Timer() as t:
            result = T.run_campaign("dual_bregman", n_samples=10_000, seed=0)
        assert result.n_samples == 10_000
        assert result.violations == 0, result.summary()
        assert t.seconds < 5.0


@pytest.mark.criterion(3, title="approximate Pythagorean and log-ratio fuzz, 10^4 samples each, < 30 s")
class TestPythagoreanFuzz:
    """The Euclidean case runs at the stated constant; see the README."""

    budget = {}

    @pytest.mark.parametrize("lemma", ["pythagorean_general", "pythagorean_l2", "pythagorean_kl", "abs_kl"])
    def test_zero_violations(self, lemma, tmp_path):
        with Timer() as t:
            result = T.run_campaign(lemma, n_samples=10_000, seed=0, witness_dir=tmp_path)
        self.budget[lemma] = t.seconds
        violations = result.violations
        assert violations == 0, result.summary() + f"; first witness {result.witnesses[0]}"

    def test_euclidean_with_diameter_constant(self):
        result = T.run_campaign("pythagorean_l2", n_samples=10_000, seed=0, l2_scale=T.SIMPLEX_DIAMETER)
        assert result.violations == 0, result.summary()

    def test_runtime(self):
        assert len(self.budget) == 4
        assert sum(self.budget.values()) < 30.0


@pytest.mark.criterion(4, title="analytic vs central-difference gradients, 20 configs per loss and kind, < 60 s")
class TestGradients:
    def test_all_losses(self):
        worst = {}
        with Timer() as t:
            for name in LOSSES:
                for kind in KINDS:
                    errs = []
                    for cfg in range(20):
                        rng = np.random.default_rng(10_000 + 100 * cfg)
                        S, A = int(rng.integers(1, 5)), int(rng.integers(2, 5))
                        loss = make_loss(name, S, A, rng)
                        f = make_f(kind, S, A, rng)
                        _, g = X.loss_gradient(loss, f)
                        errs.append(rel_err(g, central_difference(loss, f, h=1e-6)))
                    worst[name, kind] = max(errs)
        bad = {k: v for k, v in worst.items() if v > 1e-5}
        assert not bad, bad
        assert t.seconds < 60.0


@pytest.mark.criterion(5, title="tabular exact run matches exponentiated-gradient loop, 10 MDPs, K = 50, < 30 s")
class TestOracleEquivalence:
    def test_iterates(self):
        with Timer() as t:
            for seed in range(10):
                rng = np.random.default_rng(500 + seed)
                S, A = int(rng.integers(2, 11)), int(rng.integers(2, 5))
                mdp = random_mdp(S, A, 0.9, 500 + seed)
                cfg = E.DapoConfig(algorithm="dapo_kl", approx="tabular", actor_mode="exact", iterations=50,
                                   schedule=E.StepSchedule("constant", 1.0))
                log = E.run_dapo(mdp, cfg)
                ref = pmd(mdp.transition, mdp.cost, mdp.discount, np.full((S, A), 1.0 / A), [1.0] * 50)
                assert len(log.policies) == 51
                np.testing.assert_allclose(np.stack(log.policies), np.stack(ref), rtol=0, atol=1e-8)
        assert t.seconds < 30.0


def geometric_run(algorithm, seed):
    rng = np.random.default_rng(seed)
    S, A = int(rng.integers(3, 9)), int(rng.integers(2, 5))
    mdp = random_mdp(S, A, 0.9, seed)
    cfg = E.DapoConfig(algorithm=algorithm, actor_mode="exact", iterations=100,
                       schedule=E.StepSchedule("geometric", 2.0, 10.0, vartheta=2.0))
    log = E.run_dapo(mdp, cfg)
    c = E.estimate_constants(mdp, log.policies, log.pi_star, np.full(S, 1.0 / S), log.weights)
    return mdp, log, c


@pytest.mark.criterion(6, title="linear rate under a geometric schedule, KL and Euclidean, 5 MDPs, < 2 min")
class TestLinearRate:
    @pytest.mark.parametrize("algorithm", ["dapo_kl", "dapo_l2"])
    def test_bound(self, algorithm):
        with Timer() as t:
            for seed in range(5):
                mdp, log, c = geometric_run(algorithm, seed)
                # step-size growth hypothesis, checked against the realized constant
                assert c.vartheta > 1.0
                assert 10.0 >= c.vartheta / (c.vartheta - 1.0)
                gap = log.column("value_gap")
                K = np.arange(len(gap))
                bound = T.linear_rate_bound(K, gap[0], log.records[0]["d_star"], mdp.discount, 2.0, c.vartheta)
                excess = gap - (bound + 1e-8)
                assert np.all(excess <= 0), (seed, K[np.argmax(excess)], excess.max())
        assert t.seconds < 60.0


@pytest.mark.criterion(7, title="error floor under critic noise, 200 iterations, 5 seeds, < 2 min")
class TestErrorFloor:
    @pytest.mark.parametrize("eps", [0.01, 0.05])
    @pytest.mark.parametrize("algorithm", ["dapo_kl", "dapo_l2"])
    def test_plateau(self, algorithm, eps):
        gamma = 0.9
        with Timer() as t:
            for seed in range(5):
                mdp = random_mdp(6, 3, gamma, 700 + seed)
                cfg = E.DapoConfig(algorithm=algorithm, actor_mode="exact", iterations=200,
                                   schedule=E.StepSchedule("constant", 1.0 if algorithm == "dapo_kl" else 0.1),
                                   critic=E.CriticConfig("uniform_noise", eps), seed=seed)
                log = E.run_dapo(mdp, cfg)
                c = E.estimate_constants(mdp, log.policies, log.pi_star, np.full(6, 1 / 6), log.weights)
                constants = T.TheoryConstants.for_mirror(cfg.mirror, C=c.c_rho)
                eps_actor = max(r["eps_actor_hat"] for r in log.records)
                floor = T.error_floor(gamma, c.vartheta, eps_actor, eps, constants)
                plateau = log.column("value_gap")[-20:].mean()
                assert plateau <= floor, (seed, plateau, floor)
        assert t.seconds < 60.0


@pytest.mark.criterion(8, title="soft actor-critic gradient identity and O(1/K) average gap, < 2 min")
class TestSac:
    def test_gradient_identity(self):
        worst = 0.0
        for i in range(100):
            rng = np.random.default_rng(800 + i)
            S = 1 if i < 50 else int(rng.integers(2, 6))
            A = int(rng.integers(2, 6))
            tau = float(rng.uniform(0.05, 3.0))
            pi_k = rng.dirichlet(np.ones(A), S)
            Q_tau = rng.uniform(0, 4, (S, A))
            soft_q = Q_tau - tau * np.log(pi_k)
            w = rng.dirichlet(np.ones(S))
            f = make_f(KINDS[i % 3], S, A, rng)
            _, g_sac = X.loss_gradient(X.sac_loss(pi_k, soft_q, tau, w), f)
            _, g_kl = X.loss_gradient(X.dapo_kl_loss(X.ActorTarget.entropic(np.log(pi_k), Q_tau, 1 / tau, w)), f)
            worst = max(worst, rel_err(g_sac, tau * g_kl))
        assert worst <= 1e-8

    @pytest.mark.parametrize("seed", range(3))
    def test_average_gap_halves(self, seed):
        mdp = random_mdp(5, 3, 0.9, 850 + seed)
        init = np.random.default_rng(seed).dirichlet(np.ones(3), 5)
        cfg = E.DapoConfig(algorithm="sac", tau=1.0, schedule=E.StepSchedule("constant", 1.0),
                           actor_mode="exact", iterations=200)
        gaps = E.run_sac_mode(mdp, cfg, initial_policy=init).column("value_gap")[1:]
        for K in (50, 100):
            ratio = gaps[: 2 * K].mean() / gaps[:K].mean()
            assert 0.4 <= ratio <= 0.6, (K, ratio)


@pytest.mark.criterion(9, title="gridworld MLP comparison: DAPO-KL median final gap below AMPO, < 10 min")
@pytest.mark.slow
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
class TestGridworldComparison:
    """Each algorithm is tuned over a shared grid on held-out seeds, then compared on fresh seeds."""

    LRS = [0.01, 0.03, 0.1, 0.3, 1.0]
    ETAS = [0.3, 1.0, 3.0]

    def test_ordering(self, tmp_path, capsys):
        base = C.load(CONFIGS / "compare_gridworld.toml").to_dict()
        with Timer() as t:
            tune = dict(base, seed=1, repetitions=5, sweep={"algorithm": ["dapo_kl", "ampo"], "eta": self.ETAS,
                                                            "actor_lr": self.LRS})
            tune.pop("compare")
            (tmp_path / "tune.toml").write_text(tomli_w.dumps(tune), encoding="utf-8")
            # divergent grid points are recorded and make the sweep exit 3
            code = main(["sweep", "--config", str(tmp_path / "tune.toml"), "--out", str(tmp_path / "tune"),
                         "--quiet"])
            assert code in (0, 3)
            best = {}
            for row in read_rows(tmp_path / "tune" / "summary.csv"):
                if row["status"] != "ok":
                    continue
                alg, gap = row["algorithm"], float(row["final_gap_mean"])
                if alg not in best or gap < best[alg][0]:
                    best[alg] = (gap, float(row["actor_lr"]), float(row["eta"]))
            assert set(best) == {"dapo_kl", "ampo"}

            evaluate = dict(base, seed=0, compare={
                "algorithms": ["dapo_kl", "ampo"], "actor_steps": [1], "seeds": 5,
                "overrides": {a: {"actor_lr": lr, "eta": eta} for a, (_, lr, eta) in best.items()}})
            (tmp_path / "eval.toml").write_text(tomli_w.dumps(evaluate), encoding="utf-8")
            assert main(["compare", "--config", str(tmp_path / "eval.toml"), "--out", str(tmp_path / "eval"),
                         "--quiet"]) == 0
        summary = {r["algorithm"]: float(r["median_final_gap"]) for r in read_rows(tmp_path / "eval" /
                                                                                   "compare_summary.csv")}
        with capsys.disabled():
            print(f"\n  tuned (gap, lr, eta): {best}\n  evaluation medians: {summary}")
        assert summary["dapo_kl"] < summary["ampo"]
        assert t.seconds < 600.0


DETERMINISM = """
seed = 3
repetitions = 2
[mdp]
source = "gridworld"
size = 3
[run]
algorithm = "dapo_kl"
approx = "mlp"
hidden = [8]
actor_steps = 3
actor_lr = 0.1
iterations = 6
[run.schedule]
kind = "constant"
eta0 = 1.0
[run.critic]
mode = "uniform_noise"
epsilon = 0.05
[sweep]
eta = [0.5, 1.0]
[compare]
algorithms = ["dapo_kl", "ampo", "mampo"]
actor_steps = [1, 2]
seeds = 2
"""


@pytest.mark.criterion(10, title="repeated commands give byte-identical output")
class TestDeterminism:
    @pytest.mark.parametrize("argv", [
        ["run"], ["sweep", "--jobs", "3"], ["compare", "--jobs", "3"],
        ["verify", "pythagorean_l2", "--samples", "2000"],
        ["gen-mdp", "--kind", "random", "--states", "6"],
    ], ids=["run", "sweep", "compare", "verify", "gen-mdp"])
    def test_repeat(self, argv, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(DETERMINISM, encoding="utf-8")
        outputs = []
        for trial in ("a", "b"):
            out = tmp_path / trial
            if argv[0] == "gen-mdp":
                out.mkdir()
                args = [*argv, "--seed", "3", "--out", str(out / "mdp.json")]
            elif argv[0] == "verify":
                args = [*argv, "--out", str(out)]
            else:
                args = [*argv, "--config", str(cfg), "--out", str(out)]
            main([*args, "--quiet"])
            files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "config.toml")
            outputs.append({str(p.relative_to(out)): p.read_bytes() for p in files})
        assert outputs[0], "no output written"
        assert outputs[0] == outputs[1]
