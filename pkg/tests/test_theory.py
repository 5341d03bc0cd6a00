import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import rel_entr, softmax

from dapo import theory as T
from dapo.errors import DomainError
from dapo.mirror_maps import MirrorMap, Variant


def simplex(rng, n):
    return rng.dirichlet(np.ones(n))


class TestTheoryConstants:
    def test_psi_values(self):
        np.testing.assert_allclose(T.TheoryConstants("l2").psi([0.0, 0.5, 2.0]), [0.0, 1.0, 2.0])
        kl = T.TheoryConstants("kl", C=2.0)
        np.testing.assert_allclose(kl.psi(0.5), 3.0 * (0.5 + 1.0))

    def test_omega(self):
        assert T.TheoryConstants("l2").omega == 2
        assert T.TheoryConstants("kl").omega == 1

    def test_for_mirror(self):
        assert T.TheoryConstants.for_mirror(MirrorMap(Variant.SQUARED_L2)).psi_kind == "l2"
        assert T.TheoryConstants.for_mirror(MirrorMap(Variant.NEGENT_SIMPLEX), 3.0).C == 3.0

    @pytest.mark.parametrize("kind,C", [("bad", 0.0), ("kl", -1.0)])
    def test_rejects(self, kind, C):
        with pytest.raises(DomainError):
            T.TheoryConstants(kind, C)

    def test_negative_argument(self):
        with pytest.raises(DomainError):
            T.TheoryConstants("l2").psi(-1.0)

    @given(st.sampled_from(["l2", "kl"]), st.floats(0, 10), st.floats(0, 100), st.floats(0, 100))
    def test_monotone_concave(self, kind, C, a, b):
        t = T.TheoryConstants(kind, C)
        lo, hi = sorted((a, b))
        assert t.psi(0.0) == 0.0
        assert t.psi(lo) <= t.psi(hi) + 1e-12
        # the sqrt part is concave; the linear part keeps the midpoint inequality tight
        mid = t.psi(0.5 * (lo + hi))
        assert mid >= 0.5 * (t.psi(lo) + t.psi(hi)) - 1e-9 * (1 + abs(mid))


class TestPythagoreanGeneral:
    maps = [MirrorMap(Variant.SQUARED_L2), MirrorMap(Variant.NEGENT_ORTHANT)]

    def points(self, m, rng, n):
        if m.entropic:
            return np.exp(rng.normal(size=n)), np.exp(rng.normal(size=n))
        return rng.normal(size=n), rng.normal(size=n)

    @pytest.mark.parametrize("m", maps, ids=lambda m: m.variant.value)
    def test_three_point_identity(self, m):
        # independent oracle: LHS equals <grad(u*) - grad(c), u* - u>
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(2, 8)
            u = simplex(rng, n)
            v, c = self.points(m, rng, n)
            res = T.check_pythagorean_general(m, u, v, c)
            ustar = m.project(v)
            if m.entropic:
                oracle = np.dot(np.log(ustar) - np.log(c), ustar - u)
            else:
                oracle = np.dot(ustar - c, ustar - u)
            np.testing.assert_allclose(res.lhs, oracle, atol=1e-10)
            assert res.holds

    @pytest.mark.parametrize("m", maps, ids=lambda m: m.variant.value)
    def test_v_equals_c(self, m):
        rng = np.random.default_rng(1)
        u = simplex(rng, 4)
        v, _ = self.points(m, rng, 4)
        res = T.check_pythagorean_general(m, u, v, v)
        assert res.rhs == 0.0
        assert res.lhs <= 1e-12

    @pytest.mark.parametrize("m", maps, ids=lambda m: m.variant.value)
    def test_u_is_projection(self, m):
        rng = np.random.default_rng(2)
        v, c = self.points(m, rng, 5)
        res = T.check_pythagorean_general(m, m.project(v), v, c)
        np.testing.assert_allclose([res.lhs, res.rhs], [0.0, 0.0], atol=1e-12)


class TestPythagoreanL2:
    def test_v_equals_c(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=4)
        res = T.check_pythagorean_l2(simplex(rng, 4), v, v)
        assert res.rhs == 0.0 and res.lhs <= 1e-12

    @pytest.mark.parametrize("a", [0.1, 0.3, 0.9])
    def test_stated_constant_counterexample(self, a):
        u, v, c = [0.0, 1.0], [1.0, 0.0], [1.0 - a, a]
        res = T.check_pythagorean_l2(u, v, c)
        np.testing.assert_allclose([res.lhs, res.rhs], [2 * a, math.sqrt(2) * a])
        assert not res.holds
        # the simplex diameter is the constant that makes the bound tight here
        res = T.check_pythagorean_l2(u, v, c, scale=T.SIMPLEX_DIAMETER)
        np.testing.assert_allclose(res.rhs, 2 * a)
        assert res.holds

    def test_diameter_bound_fuzz(self):
        res = T.run_campaign("pythagorean_l2", 2000, seed=5, l2_scale=T.SIMPLEX_DIAMETER)
        assert res.holds, res.summary()


class TestPythagoreanKl:
    def test_v_equals_c(self):
        rng = np.random.default_rng(0)
        v = simplex(rng, 3)
        res = T.check_pythagorean_kl(simplex(rng, 3), v, v)
        assert res.rhs == 0.0 and res.lhs <= 1e-12

    def test_u_equals_v(self):
        rng = np.random.default_rng(1)
        v, c = simplex(rng, 4), simplex(rng, 4)
        res = T.check_pythagorean_kl(v, v, c)
        d = float(np.sum(rel_entr(v, c)))
        np.testing.assert_allclose(res.lhs, 0.0, atol=1e-12)
        np.testing.assert_allclose(res.rhs, 2.0 * (d + math.sqrt(2 * d)))
        assert res.holds

    def test_rejects_boundary_v(self):
        with pytest.raises(DomainError):
            T.check_pythagorean_kl([0.5, 0.5], [1.0, 0.0], [0.5, 0.5])


class TestAbsKl:
    def test_equal(self):
        res = T.check_abs_kl_bound([0.3, 0.7], [0.3, 0.7])
        assert res == (0.0, 0.0, True)

    def test_point_mass(self):
        res = T.check_abs_kl_bound([1.0, 0.0], [0.5, 0.5])
        l2 = math.log(2)
        np.testing.assert_allclose([res.lhs, res.rhs], [l2, l2 + math.sqrt(2 * l2)])
        assert res.holds

    def test_not_absolutely_continuous(self):
        with pytest.raises(DomainError):
            T.check_abs_kl_bound([0.5, 0.5], [1.0, 0.0])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 16), st.integers(0, 2**32 - 1))
    def test_random(self, n, seed):
        rng = np.random.default_rng(seed)
        q = np.maximum(simplex(rng, n), 1e-12)
        assert T.check_abs_kl_bound(simplex(rng, n), q / q.sum()).holds


class TestKlFromLogits:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 2**32 - 1))
    def test_matches_direct(self, n, seed):
        rng = np.random.default_rng(seed)
        F, G = rng.normal(size=(3, n)) * 3, rng.normal(size=(3, n)) * 3
        direct = rel_entr(softmax(F, axis=1), softmax(G, axis=1)).sum(axis=1)
        np.testing.assert_allclose(T.kl_from_logits(F, G), direct, atol=1e-13)

    def test_tiny_divergence_is_resolved(self):
        # p = (1-a, a), q = (1-b, b) with a, b ~ e^-60: KL ~ a log(a/b) + b - a
        F = np.array([[0.0, -60.0]])
        G = np.array([[0.0, -59.5]])
        a, b = math.exp(-60.0), math.exp(-59.5)
        expected = a * math.log(a / b) + (b - a)
        np.testing.assert_allclose(T.kl_from_logits(F, G), [expected], rtol=1e-6)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        F = rng.normal(size=(100, 4)) * 30
        assert np.all(T.kl_from_logits(F, F + 1e-14 * rng.normal(size=F.shape)) >= 0)


class TestBaseRelation:
    def instance(self, seed, mirror, S=3, A=4):
        rng = np.random.default_rng(seed)
        pi_k = rng.dirichlet(np.ones(A), S)
        Q = rng.uniform(0, 10, (S, A))
        eta = rng.uniform(0.1, 10)
        return rng, pi_k, Q, eta

    def exact(self, mirror, pi_k, Q, eta):
        return pi_k - eta * Q if mirror.variant is Variant.SQUARED_L2 else np.log(pi_k) - eta * Q

    @pytest.mark.parametrize("key", ["l2", "negent_simplex"])
    @pytest.mark.parametrize("ref", ["pi_k", "pi_star"])
    def test_exact_actor(self, key, ref):
        m = MirrorMap.from_key(key)
        for seed in range(20):
            rng, pi_k, Q, eta = self.instance(seed, m)
            pi_ref = pi_k if ref == "pi_k" else rng.dirichlet(np.ones(4), 3)
            res = T.check_base_relation(m, pi_k, self.exact(m, pi_k, Q, eta), Q, eta, pi_ref)
            np.testing.assert_allclose(res.rhs, 0.0, atol=1e-12)
            assert np.all(res.lhs <= 1e-8)

    def test_exact_pmd_three_point(self):
        # oracle: with f exact, the entropic LHS equals -KL(pi_ref || pi_next)
        rng, pi_k, Q, eta = self.instance(3, None)
        pi_ref = rng.dirichlet(np.ones(4), 3)
        m = MirrorMap(Variant.NEGENT_SIMPLEX)
        res = T.check_base_relation(m, pi_k, np.log(pi_k) - eta * Q, Q, eta, pi_ref)
        nxt = softmax(np.log(pi_k) - eta * Q, axis=1)
        # lhs = D(pi_ref, nxt) + [D(nxt, c') - D(pi_ref, c')] with c' = nxt, so lhs = 0
        np.testing.assert_allclose(res.lhs, 0.0, atol=1e-9)
        assert np.all(nxt > 0)

    @pytest.mark.parametrize("key", ["l2", "negent_simplex"])
    def test_perturbed(self, key):
        m = MirrorMap.from_key(key)
        scale = T.SIMPLEX_DIAMETER if key == "l2" else 1.0
        for seed in range(1000):
            rng, pi_k, Q, eta = self.instance(seed, m)
            F = self.exact(m, pi_k, Q, eta) + rng.normal(scale=0.1, size=Q.shape)
            pi_ref = pi_k if seed % 2 else rng.dirichlet(np.ones(4), 3)
            res = T.check_base_relation(m, pi_k, F, Q, eta, pi_ref, l2_scale=scale)
            assert res.holds, (seed, res.lhs, res.rhs)

    @pytest.mark.parametrize("key", ["l2", "negent_simplex"])
    def test_small_step_limit(self, key):
        m = MirrorMap.from_key(key)
        rng, pi_k, Q, _ = self.instance(7, m)
        noise = rng.normal(scale=1e-3, size=Q.shape)
        scale = T.SIMPLEX_DIAMETER if key == "l2" else 1.0
        for eta in 10.0 ** np.arange(-4, 1):
            res = T.check_base_relation(m, pi_k, self.exact(m, pi_k, Q, eta) + noise, Q, eta,
                                        rng.dirichlet(np.ones(4), 3), l2_scale=scale)
            assert res.holds
            assert np.all(np.isfinite(res.lhs)) and np.all(np.isfinite(res.rhs))

    def test_euclidean_stated_constant_violation(self):
        # a one-state, two-action instance of the diameter counterexample:
        # target c = pi_k - Q = (1 - a, a), f = e1 (its own projection), pi_ref = e2
        a = 0.2
        pi_k = np.array([[0.5, 0.5]])
        Q = np.array([[a - 0.5, 0.5 - a]])
        F = np.array([[1.0, 0.0]])
        res = T.check_base_relation(MirrorMap(Variant.SQUARED_L2), pi_k, F, Q, 1.0, np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(res.lhs, [2 * a])
        np.testing.assert_allclose(res.rhs, [math.sqrt(2) * a])
        assert not res.holds

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            T.check_base_relation(MirrorMap(Variant.SQUARED_L2), np.ones((2, 2)) / 2, np.zeros((2, 3)),
                                  np.zeros((2, 2)), 1.0, np.ones((2, 2)) / 2)

    def test_orthant_rejected(self):
        with pytest.raises(DomainError):
            T.check_base_relation(MirrorMap(Variant.NEGENT_ORTHANT), [[0.5, 0.5]], [[0.0, 0.0]],
                                  [[0.0, 0.0]], 1.0, [[0.5, 0.5]])


class TestConjugateIdentities:
    @pytest.mark.parametrize("key", ["l2", "negent_orthant", "negent_simplex"])
    def test_report(self, key):
        rep = T.check_conjugate_identities(MirrorMap.from_key(key), n_samples=2000, seed=1)
        assert rep.holds(), rep

    def test_l2_exact(self):
        rep = T.check_conjugate_identities(MirrorMap(Variant.SQUARED_L2), n_samples=200)
        assert rep.inverse_err == 0.0 and rep.shift_err == 0.0

    def test_simplex_x_equals_y(self):
        m = MirrorMap(Variant.NEGENT_SIMPLEX)
        x = np.array([0.2, 0.3, 0.5])
        xs = np.array([4.0, -1.0, 0.5])
        assert np.dot(m.grad(m.conj_grad(xs)), x - x) == 0.0


class TestCampaigns:
    def test_result_independent_of_threads(self):
        a = T.run_campaign("pythagorean_kl", 400, seed=3, threads=1)
        b = T.run_campaign("pythagorean_kl", 400, seed=3, threads=4)
        assert (a.violations, a.worst_margin) == (b.violations, b.worst_margin)

    def test_seed_changes_draws(self):
        a = T.run_campaign("abs_kl", 200, seed=1)
        b = T.run_campaign("abs_kl", 200, seed=2)
        assert a.worst_margin != b.worst_margin

    @pytest.mark.parametrize("name", ["dual_bregman", "pythagorean_general", "pythagorean_kl", "abs_kl",
                                      "base_relation"])
    def test_holds(self, name):
        res = T.run_campaign(name, 2000, seed=11, l2_scale=T.SIMPLEX_DIAMETER)
        assert res.holds, res.summary()

    def test_unknown(self):
        with pytest.raises(DomainError):
            T.run_campaign("nope", 10)

    def test_witness_written_and_replayed(self, tmp_path):
        res = T.run_campaign("pythagorean_l2", 3000, seed=0, witness_dir=tmp_path, max_witnesses=3)
        assert res.violations > 0
        assert len(res.witnesses) == 3
        for path in res.witnesses:
            doc = json.loads(path.read_text(encoding="utf-8"))
            assert doc["lemma"] == "pythagorean_l2"
            replay = T.replay_witness(path)
            assert not replay.holds
            np.testing.assert_allclose([replay.lhs, replay.rhs], [doc["lhs"], doc["rhs"]], rtol=1e-12)

    def test_fault_injection(self, tmp_path, monkeypatch):
        real = MirrorMap.bregman

        def corrupted(self, x, y):
            return real(self, x, y) + 0.1

        monkeypatch.setattr(MirrorMap, "bregman", corrupted)
        res = T.run_campaign("pythagorean_general", 200, seed=0, witness_dir=tmp_path)
        assert not res.holds
        assert res.witnesses and res.witnesses[0].exists()


class TestBounds:
    def test_linear_rate_bound(self):
        K = np.arange(5)
        got = T.linear_rate_bound(K, gap0=2.0, d_star0=1.0, gamma=0.9, eta0=2.0, vartheta=1.5)
        expected = (1 - 1 / 1.5) ** K * (2.0 + 1.0 / (0.1 * 2.0 * 0.5))
        np.testing.assert_allclose(got, expected)

    def test_floor(self):
        c = T.TheoryConstants("l2")
        got = T.error_floor(0.9, 2.0, eps_actor=0.5, eps_critic=0.1, constants=c)
        np.testing.assert_allclose(got, (4.0 * 1.0 + 2 * 2.0 * 0.1) / 0.1)
        np.testing.assert_allclose(T.error_floor(0.9, 2.0, eps_critic=0.1), 4.0)

    def test_vartheta_must_exceed_one(self):
        with pytest.raises(DomainError):
            T.linear_rate_bound(1, 1.0, 1.0, 0.9, 2.0, 1.0)


class TestOmegaScaling:
    @pytest.mark.parametrize("kind,omega", [("l2", 2), ("kl", 1)])
    @pytest.mark.parametrize("seed", range(3))
    def test_slope(self, kind, omega, seed):
        assert abs(T.omega_scaling(kind, seed=seed) - omega) <= 0.05

    def test_matches_constants(self):
        for kind in ("l2", "kl"):
            assert round(T.omega_scaling(kind)) == T.TheoryConstants(kind).omega
