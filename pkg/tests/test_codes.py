import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gifs import codes as cs
from gifs.core import a_priori_error
from gifs.errors import ResourceError, UsageError
from gifs.geometry import diameter, hausdorff, interval_grid, union


def spec(text, m=2, n=2):
    return cs.parse_code(text, m, n)


def code_strategy(n, m, k):
    return st.integers(0, 2**32 - 1).map(lambda s: cs.random_code(np.random.default_rng(s), n, m, k))


class TestTrees:
    @pytest.mark.parametrize("n,m,k", [(2, 2, 1), (2, 2, 2), (2, 2, 3), (3, 2, 2), (2, 3, 2), (3, 3, 2)])
    def test_cardinality_matches_enumeration(self, n, m, k):
        trees = list(cs.enumerate_level(n, m, k))
        assert cs.level_cardinality(n, m, k) == len(trees) == len(oracles.all_trees(n, m, k))
        assert sorted(map(repr, trees)) == sorted(map(repr, oracles.all_trees(n, m, k)))

    def test_sixteen(self):
        assert cs.level_cardinality(2, 2, 3) == 16

    def test_closed_form(self):
        for n, m, k in [(2, 2, 4), (3, 2, 4), (2, 3, 3)]:
            assert cs.level_cardinality(n, m, k) == n ** (m ** (k - 1))

    def test_constant_tree(self):
        assert cs.constant_tree(2, 2, 3) == oracles.const_tree(2, 2, 3) == ((2, 2), (2, 2))

    def test_check_tree_shape(self):
        cs.check_tree(((1, 2), (2, 1)), 3, 2, 2)
        with pytest.raises(UsageError):
            cs.check_tree((1, 2, 1), 2, 2, 2)
        with pytest.raises(UsageError):
            cs.check_tree((1, 3), 2, 2, 2)
        with pytest.raises(UsageError):
            cs.check_tree(1, 2, 2)


class TestTau:
    def test_example(self):
        a = cs.FiniteCode((2, (2, 2)), 2)
        b = cs.FiniteCode((1, (1, 1)), 2)
        t = cs.tau_apply(1, [a, b], 3)
        assert cs.format_code(t) == "1;(2,1);((2,2),(1,1))"
        assert list(t.levels) == oracles.interleave(1, [a.levels, b.levels], 3)

    @given(code_strategy(3, 2, 5), code_strategy(3, 2, 5), st.integers(1, 3))
    def test_matches_hand_interleave(self, a, b, i):
        t = cs.tau_apply(i, [a, b], 6)
        assert list(t.levels) == oracles.interleave(i, [a.levels, b.levels], 6)

    @given(code_strategy(2, 3, 4), code_strategy(2, 3, 4), code_strategy(2, 3, 4), st.integers(1, 2))
    def test_projection_inverts_tau(self, a, b, c, i):
        t = cs.tau_apply(i, [a, b, c], 5)
        assert [cs.project(t, j) for j in (1, 2, 3)] == [a, b, c]

    @pytest.mark.parametrize("n,m,k", [(2, 2, 2), (2, 2, 3), (3, 2, 2), (2, 3, 2)])
    def test_covering(self, n, m, k):
        for levels in itertools.product(*[oracles.all_trees(n, m, j) for j in range(1, k + 1)]):
            g = cs.FiniteCode(levels, m, check=False)
            assert cs.tau_apply(g.level(1), [cs.project(g, j) for j in range(1, m + 1)], k) == g

    def test_argument_checks(self):
        a = cs.FiniteCode((1,), 2)
        with pytest.raises(UsageError):
            cs.tau_apply(1, [a], 2)
        with pytest.raises(UsageError):
            cs.tau_apply(1, [a, a], 3)
        with pytest.raises(UsageError):
            cs.tau_apply(0, [a, a], 2)

    def test_codespec_projection(self):
        x = spec("1;(2,1)|pad=2")
        assert cs.project(x, 1) == spec("2|pad=2")
        assert cs.project(x, 2) == spec("1|pad=2")
        assert cs.project(cs.CodeSpec.constant(1, 2), 2) == cs.CodeSpec.constant(1, 2)


class TestTauAlpha:
    def test_length_one_is_tau(self):
        a, b = cs.CodeSpec.constant(1, 2), cs.CodeSpec.constant(2, 2)
        alpha = cs.FiniteCode((2,), 2)
        assert cs.tau_alpha_apply(alpha, (a, b), 4) == cs.tau_apply(2, [a, b], 4)

    def test_length_two(self):
        alpha = cs.FiniteCode((1, (2, 1)), 2)
        bs = [cs.CodeSpec.constant(s, 2) for s in (1, 2, 2, 1)]
        nest = ((bs[0], bs[1]), (bs[2], bs[3]))
        got = cs.tau_alpha_apply(alpha, nest, 4)
        inner = [cs.tau_apply(2, nest[0], 3), cs.tau_apply(1, nest[1], 3)]
        assert got == cs.tau_apply(1, inner, 4)

    @settings(max_examples=40)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    def test_prefix(self, seed, k):
        rng = np.random.default_rng(seed)
        alpha = cs.random_code(rng, 2, 2, k)

        def nest(level):
            if level == 0:
                return cs.random_codespec(rng, 2, 2, 3)
            return tuple(nest(level - 1) for _ in range(2))

        out = cs.tau_alpha_apply(alpha, nest(k), k + 3)
        assert out.truncate(k) == alpha


class TestDistance:
    def test_identical(self):
        x = spec("1;(2,1)|pad=2")
        assert cs.code_distance(x, x, 20).upper == 0

    def test_first_level(self):
        d = cs.code_distance(cs.CodeSpec.constant(1, 2), cs.CodeSpec.constant(2, 2), 20)
        assert d.tail == 0 and d.lower == Fraction(1, 2)  # sum over all levels of 3^-i

    def test_series_bound(self):
        for m in (1, 2, 3):
            d = cs.code_distance(cs.CodeSpec.constant(1, m), cs.CodeSpec.constant(2, m), 30)
            assert d.lower == Fraction(1, m)

    def test_finite_codes_bracket(self):
        a = cs.FiniteCode((1, (1, 2)), 2)
        b = cs.FiniteCode((1, (2, 2)), 2)
        d = cs.code_distance(a, b, 20)
        assert d.lower == Fraction(1, 9)
        assert d.tail == cs.tail_mass(2, 2) == Fraction(1, 18)

    @settings(max_examples=60)
    @given(st.integers(0, 2**32 - 1))
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (cs.random_codespec(rng, 2, 2, 4) for _ in range(3))
        dab, dbc, dac = (cs.code_distance(p, q, 12) for p, q in ((a, b), (b, c), (a, c)))
        assert dab.lower == cs.code_distance(b, a, 12).lower
        assert dac.lower <= dab.upper + dbc.upper
        assert (dab.upper == 0) == (a == b)

    @settings(max_examples=60)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2), (3, 2), (2, 3)]))
    def test_tau_lipschitz(self, seed, nm):
        n, m = nm
        rng = np.random.default_rng(seed)
        i = int(rng.integers(1, n + 1))
        al = [cs.random_codespec(rng, n, m, 5) for _ in range(m)]
        be = [cs.random_codespec(rng, n, m, 5) for _ in range(m)]
        lhs = cs.code_distance(cs.tau_apply(i, al, 20), cs.tau_apply(i, be, 20), 20)
        rhs = max(cs.code_distance(a, b, 20).upper for a, b in zip(al, be))
        assert lhs.lower <= Fraction(m, m + 1) * rhs + lhs.tail


class TestMapFamily:
    def test_f_alpha_values(self, S_conn):
        x = cs.diagonal([1.0], 2)
        assert cs.f_alpha_eval(S_conn, cs.FiniteCode((1,), 2), x) == pytest.approx([0.5])
        assert cs.f_alpha_eval(S_conn, cs.FiniteCode((1, (1, 1)), 2), x) == pytest.approx([0.25])
        for k in range(1, 8):
            alpha = cs.CodeSpec.constant(1, 2).truncate(k)
            assert cs.f_alpha_eval(S_conn, alpha, x) == pytest.approx([0.5**k])

    def test_batch_matches_hand_recursion(self, S_conn):
        rng = np.random.default_rng(2)
        alpha = cs.random_code(rng, 2, 2, 3)
        leaves_pts = rng.uniform(0, 1, size=(7, 8, 1))
        batch = cs.f_alpha_batch(S_conn, alpha, leaves_pts)

        def hand(levels, pts):
            # pts holds the m**k leaves of this branch, left to right
            f = S_conn.maps[levels[0] - 1]
            if len(levels) == 1:
                return f(pts)
            w = len(pts) // 2
            subs = [hand(tuple(t[j] for t in levels[1:]), pts[j * w:(j + 1) * w]) for j in range(2)]
            return f(np.stack(subs))

        for row, out in zip(leaves_pts, batch):
            assert out == pytest.approx(hand(alpha.levels, row), abs=1e-15)

    def test_batch_on_replicated_leaves(self, S_sier):
        alpha = cs.FiniteCode((3, (1,), ((2,),)), 1)
        x = np.array([[0.3, 0.7]])
        batch = cs.f_alpha_batch(S_sier, alpha, x[None])
        assert batch[0] == pytest.approx(cs.f_alpha_eval(S_sier, alpha, x), abs=1e-15)

    def test_symbol_out_of_range(self, S_conn):
        with pytest.raises(UsageError):
            cs.f_alpha_eval(S_conn, cs.FiniteCode((3,), 2), cs.diagonal([0.0], 2))


class TestCodingPoint:
    def test_constant_codes(self, S_conn):
        base = cs.diagonal([0.0], 2)
        p1, b1 = cs.coding_point(S_conn, cs.CodeSpec.constant(1, 2), 20, base)
        p2, b2 = cs.coding_point(S_conn, cs.CodeSpec.constant(2, 2), 20, base)
        assert abs(p1[0]) <= b1 and abs(p2[0] - 1) <= b2
        assert b1 <= 2 * 2**-20

    def test_base_independence(self, S_conn, S_disc):
        rng = np.random.default_rng(5)
        for S in (S_conn, S_disc):
            for _ in range(10):
                alpha = cs.random_codespec(rng, 2, 2, 4)
                p, bp = cs.coding_point(S, alpha, 15, cs.diagonal([0.2], 2))
                q, bq = cs.coding_point(S, alpha, 15, rng.uniform(-1, 1, size=(2, 1)))
                assert abs(p[0] - q[0]) <= bp + bq

    def test_lands_on_attractor(self, S_disc):
        rng = np.random.default_rng(8)
        for _ in range(20):
            p, b = cs.coding_point(S_disc, cs.random_codespec(rng, 2, 2, 5), 20, cs.diagonal([0.5], 2))
            dist = min(max(lo - p[0], p[0] - hi, 0.0) for lo, hi in oracles.DISC_ATTRACTOR)
            assert dist <= b

    def test_semiconjugacy(self, S_conn):
        rng = np.random.default_rng(3)
        base = cs.diagonal([0.0], 2)
        for _ in range(20):
            i = int(rng.integers(1, 3))
            al = [cs.random_codespec(rng, 2, 2, 3) for _ in range(2)]
            pts, bounds = zip(*(cs.coding_point(S_conn, a, 12, base) for a in al))
            lhs = S_conn.maps[i - 1](np.stack(pts))
            q, bq = cs.coding_point(S_conn, cs.tau_apply(i, al, 13), 13, base)
            assert abs(lhs[0] - q[0]) <= 0.5 * max(bounds) + bq

    def test_depth_and_length(self, S_conn):
        with pytest.raises(UsageError):
            cs.coding_point(S_conn, cs.FiniteCode((1,), 2), 2, cs.diagonal([0.0], 2))
        with pytest.raises(UsageError):
            cs.coding_point(S_conn, cs.CodeSpec.constant(1, 2), 0, cs.diagonal([0.0], 2))


class TestCylinders:
    def test_root(self, S_conn, A_conn):
        c = cs.cylinder_set(S_conn, A_conn, cs.FiniteCode((), 2))
        assert c.resolution == A_conn.error_bound and len(c) == len(A_conn.cloud)

    def test_level_one(self, S_conn, A_conn):
        c = cs.cylinder_set(S_conn, A_conn, cs.FiniteCode((1,), 2))
        assert hausdorff(c, interval_grid(0, 0.5, 1e-4)) <= c.resolution + 1e-4

    def test_level_two_exact(self, S_conn, A_conn):
        # f_1(f_2(A,A), f_1(A,A)) = ([1/2,1] + [0,1/2]) / 4
        c = cs.cylinder_set(S_conn, A_conn, cs.FiniteCode((1, (2, 1)), 2))
        lo, hi = oracles.averaging_image([(Fraction(1, 4), Fraction(0))],
                                         [[(Fraction(1, 2), Fraction(1))], [(Fraction(0), Fraction(1, 2))]])[0]
        assert hausdorff(c, interval_grid(float(lo), float(hi), 1e-4)) <= c.resolution + 1e-4

    def test_diameter_decay(self, S_conn, A_conn):
        rng = np.random.default_rng(0)
        cache = cs.CylinderCache()
        for k in range(1, 7):
            for _ in range(5):
                c = cs.cylinder_set(S_conn, A_conn, cs.random_code(rng, 2, 2, k), cache=cache)
                assert diameter(c) <= 0.5**k + 2 * c.resolution

    def test_leafwise_agrees(self, S_conn, A_conn):
        alpha = cs.FiniteCode((2, (1, 2)), 2)
        a = cs.cylinder_set(S_conn, A_conn, alpha)
        b = cs.cylinder_set(S_conn, A_conn, alpha, 20000, 1, method="leafwise")
        assert hausdorff(a, b) <= a.resolution + b.resolution

    def test_decomposition(self, S_disc, A_disc):
        cache = cs.CylinderCache()
        for alpha in [cs.FiniteCode((), 2), cs.FiniteCode((2,), 2)]:
            parent = cs.cylinder_set(S_disc, A_disc, alpha, cache=cache)
            kids = [cs.cylinder_set(S_disc, A_disc, c, cache=cache) for c in cs.children(alpha, 2)]
            assert hausdorff(parent, union(kids)) <= parent.resolution + max(k.resolution for k in kids)

    def test_children(self):
        kids = list(cs.children(cs.FiniteCode((1,), 2), 2))
        assert len(kids) == 4 and all(k.truncate(1) == cs.FiniteCode((1,), 2) for k in kids)
        with pytest.raises(ResourceError):
            list(cs.children(cs.FiniteCode((1, (1, 1)), 2), 2, budget=10))

    def test_bad_method(self, S_conn, A_conn):
        with pytest.raises(UsageError):
            cs.cylinder_set(S_conn, A_conn, cs.FiniteCode((1,), 2), method="magic")


class TestRecover:
    def test_recovered_code_points_back(self, S_conn, A_conn):
        from gifs.geometry import CompactSetApprox, snap_to_grid
        coarse = CompactSetApprox(snap_to_grid(A_conn.cloud.points, 0.02)[0])
        for p in (0.1, 0.37, 0.9):
            code, miss = cs.recover_code(S_conn, coarse, [p], 6)
            q, b = cs.coding_point(S_conn, code, 6, cs.diagonal([0.0], 2))
            err = 1.0
            for _ in range(6):
                err = miss + 0.5 * err
            assert abs(q[0] - p) <= err + b


class TestLiterals:
    @pytest.mark.parametrize("text", ["1", "1;(2,1)", "2;(1,1);((1,2),(2,2))", "|pad=2", "1;(2,2)|pad=1"])
    def test_round_trip(self, text):
        assert cs.format_code(cs.parse_code(text, 2, 2)) == text

    def test_whitespace(self):
        assert cs.parse_code(" 1 ; ( 2 , 1 ) ") == cs.FiniteCode((1, (2, 1)), 2)

    def test_order_inferred_or_required(self):
        assert cs.parse_code("1;(1,1,2)").m == 3
        with pytest.raises(UsageError):
            cs.parse_code("1")

    @pytest.mark.parametrize("bad", ["", "1;(2,", "1;(2,1))", "a", "1;(2,3)", "|pad=0", "1|len=2"])
    def test_rejects(self, bad):
        with pytest.raises(UsageError):
            cs.parse_code(bad, 2, 2)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_random_round_trip(self, seed):
        c = cs.random_codespec(np.random.default_rng(seed), 3, 2, 4)
        assert cs.parse_code(cs.format_code(c), 2, 3) == c


def test_a_priori_bound_used_by_coding(S_conn):
    _, b = cs.coding_point(S_conn, cs.CodeSpec.constant(1, 2), 10, cs.diagonal([0.0], 2))
    assert b == a_priori_error(S_conn.phi, 2.0, 10)
