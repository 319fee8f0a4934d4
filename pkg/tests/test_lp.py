import math

import numpy as np
import pytest
from sklearn.base import clone

from distopf_admm.exceptions import FeederValidationError
from distopf_admm.lp import (
    FeederAssembler, VariableKey, assemble_centralized, build_flow_equations, build_load_model,
    build_m_matrices, build_power_balance, index_variables,
)
from distopf_admm.oracle import check_feasibility

from conftest import FIXTURES, feeder, make_bus, make_feeder, make_gen, make_line, make_load, oracle, system

S3 = math.sqrt(3.0)


def named(row, var_table):
    return {var_table[j]: v for j, v in row.coefs.items()}


def single_bus_feeder(g_sh=0.0):
    return make_feeder([make_bus("b1", g_sh=(g_sh,))], [make_gen("g1", "b1")])


class TestIndexVariables:
    def test_single_bus(self):
        keys = index_variables(single_bus_feeder())
        assert keys == [VariableKey("p_gen", "g1", 1), VariableKey("q_gen", "g1", 1), VariableKey("w", "b1", 1)]

    def test_two_bus_fixture_count(self):
        # by block: gen p,q (2) + w at two buses (2) + load pb,qb,pd,qd (4) + flows p,q both ways (4)
        keys = index_variables(feeder("two_bus_1ph"))
        assert len(keys) == 12
        assert [k.kind for k in keys] == [
            "p_gen", "q_gen", "w", "w", "p_bus_load", "q_bus_load", "p_load", "q_load",
            "p_flow", "q_flow", "p_flow", "q_flow",
        ]

    def test_block_order_and_uniqueness(self):
        keys = index_variables(feeder("four_bus_delta"))
        assert len(set(keys)) == len(keys)
        block = {"p_gen": 0, "q_gen": 0, "w": 1, "p_bus_load": 2, "q_bus_load": 2, "p_load": 2, "q_load": 2,
                 "p_flow": 3, "q_flow": 3}
        ranks = [block[k.kind] for k in keys]
        assert ranks == sorted(ranks)
        owners = [k.owner for k in keys if k.kind == "w"]
        assert owners == sorted(owners)

    def test_deterministic(self):
        f = feeder("three_bus_3ph_wye")
        assert index_variables(f) == index_variables(f)


class TestPowerBalance:
    def test_isolated_generator_bus(self):
        f = single_bus_feeder()
        keys = index_variables(f)
        rows = build_power_balance(f, keys)
        assert len(rows) == 2
        assert named(rows[0], keys) == {VariableKey("p_gen", "g1", 1): -1.0}
        assert rows[0].rhs == 0.0

    def test_bus_with_shunt_flow_and_load(self):
        f = make_feeder(
            [make_bus("b1", g_sh=(0.01,)), make_bus("b2")],
            [make_gen("g1", "b1")],
            [make_line("l1", "b1", "b2")],
            [make_load("ld", "b1")],
        )
        keys = index_variables(f)
        row = build_power_balance(f, keys)[0]
        assert row.tag.owner == "b1" and row.tag.family == "balance_p"
        assert named(row, keys) == {
            VariableKey("p_flow", "l1", 1, "from_to"): 1.0,
            VariableKey("p_bus_load", "ld", 1): 1.0,
            VariableKey("w", "b1", 1): 0.01,
            VariableKey("p_gen", "g1", 1): -1.0,
        }
        assert row.rhs == 0.0

    def test_reactive_shunt_sign(self):
        f = make_feeder([make_bus("b1", b_sh=(0.02,))], [make_gen("g1", "b1")])
        keys = index_variables(f)
        q_row = build_power_balance(f, keys)[1]
        assert named(q_row, keys)[VariableKey("w", "b1", 1)] == -0.02

    def test_two_bus_fixture_rows(self):
        f = feeder("two_bus_1ph")
        assert len(build_power_balance(f, index_variables(f))) == 4


class TestLoadModel:
    def test_wye_constant_power(self):
        f = make_feeder([make_bus("b1")], [make_gen("g", "b1")], loads=[make_load("ld", "b1", a=0.1)])
        keys = index_variables(f)
        rows = build_load_model(f, keys)
        p_row = next(r for r in rows if r.tag.family == "load_p")
        assert named(p_row, keys) == {VariableKey("p_load", "ld", 1): 1.0}
        assert p_row.rhs == 0.1
        wye = next(r for r in rows if r.tag.family == "wye_p")
        assert named(wye, keys) == {VariableKey("p_bus_load", "ld", 1): 1.0, VariableKey("p_load", "ld", 1): -1.0}
        assert wye.rhs == 0.0

    def test_voltage_substitution(self):
        # p^d - (a*alpha/2) * k*w = a*(1 - alpha/2), with k = 1 (wye) or 3 (delta)
        for conn, k in (("wye", 1.0), ("delta", 3.0)):
            f = make_feeder([make_bus("b1", (1, 2, 3))], [make_gen("g", "b1", (1, 2, 3))],
                            loads=[make_load("ld", "b1", (1, 2, 3), a=0.2, alpha=1.0, connection=conn)])
            keys = index_variables(f)
            p_row = next(r for r in build_load_model(f, keys) if r.tag.family == "load_p")
            assert named(p_row, keys)[VariableKey("w", "b1", 1)] == pytest.approx(-0.2 * 0.5 * k, abs=1e-15)
            assert p_row.rhs == pytest.approx(0.1, abs=1e-15)

    def test_delta_constant_power_totals(self):
        f = make_feeder([make_bus("b1", (1, 2, 3))], [make_gen("g", "b1", (1, 2, 3))],
                        loads=[make_load("ld", "b1", (1, 2, 3), a=0.1, b=0.05, connection="delta")])
        keys = index_variables(f)
        rows = build_load_model(f, keys)
        assert len(rows) == 12
        load_cols = [j for j, k in enumerate(keys) if k.owner == "ld"]
        M = np.zeros((len(rows), len(load_cols)))
        for r, row in enumerate(rows):
            for j, v in row.coefs.items():
                M[r, load_cols.index(j)] = v
        sol = np.linalg.solve(M, [row.rhs for row in rows])
        vals = {keys[j]: sol[k] for k, j in enumerate(load_cols)}
        assert sum(vals[VariableKey("p_bus_load", "ld", ph)] for ph in (1, 2, 3)) == pytest.approx(0.3, abs=1e-12)
        assert sum(vals[VariableKey("q_bus_load", "ld", ph)] for ph in (1, 2, 3)) == pytest.approx(0.15, abs=1e-12)

    def test_delta_coupling_coefficients(self):
        f = make_feeder([make_bus("b1", (1, 2, 3))], [make_gen("g", "b1", (1, 2, 3))],
                        loads=[make_load("ld", "b1", (1, 2, 3), connection="delta")])
        keys = index_variables(f)
        rows = {r.tag.family: r for r in build_load_model(f, keys)}

        def k(kind, ph):
            return VariableKey(kind, "ld", ph)

        expected = {
            "delta_2p": {k("p_bus_load", 2): 1.5, k("q_bus_load", 2): -S3 / 2, k("p_load", 2): -1.0,
                         k("p_load", 1): -0.5, k("q_load", 1): S3 / 2},
            "delta_2q": {k("p_bus_load", 2): S3 / 2, k("q_bus_load", 2): 1.5, k("p_load", 1): -S3 / 2,
                         k("q_load", 1): -0.5, k("q_load", 2): -1.0},
            "delta_3p": {k("q_bus_load", 2): S3, k("p_bus_load", 3): 1.5, k("q_bus_load", 3): -S3 / 2,
                         k("p_load", 1): -0.5, k("q_load", 1): -S3 / 2, k("p_load", 3): -1.0},
            "delta_3q": {k("p_bus_load", 2): -S3, k("p_bus_load", 3): S3 / 2, k("q_bus_load", 3): 1.5,
                         k("p_load", 1): S3 / 2, k("q_load", 1): -0.5, k("q_load", 3): -1.0},
        }
        for family, coefs in expected.items():
            assert named(rows[family], keys) == pytest.approx(coefs, abs=1e-15)
            assert rows[family].rhs == 0.0
        assert named(rows["delta_sum_p"], keys) == {
            **{k("p_bus_load", ph): 1.0 for ph in (1, 2, 3)}, **{k("p_load", ph): -1.0 for ph in (1, 2, 3)}}


def printed_m(r, x):
    """Literal transcription of the 3x3 coupling matrices."""
    mp = np.array([
        [-2 * r[0, 0], r[0, 1] - S3 * x[0, 1], r[0, 2] + S3 * x[0, 2]],
        [r[1, 0] + S3 * x[1, 0], -2 * r[1, 1], r[1, 2] - S3 * x[1, 2]],
        [r[2, 0] - S3 * x[2, 0], r[2, 1] + S3 * x[2, 1], -2 * r[2, 2]],
    ])
    mq = np.array([
        [-2 * x[0, 0], x[0, 1] + S3 * r[0, 1], x[0, 2] - S3 * r[0, 2]],
        [x[1, 0] - S3 * r[1, 0], -2 * x[1, 1], x[1, 2] + S3 * r[1, 2]],
        [x[2, 0] + S3 * r[2, 0], x[2, 1] - S3 * r[2, 1], -2 * x[2, 2]],
    ])
    return mp, mq


class TestMMatrices:
    def test_single_phase(self):
        mp, mq = build_m_matrices(make_line("l", "a", "b", r=0.01, x=0.02))
        assert mp.tolist() == [[-0.02]] and mq.tolist() == [[-0.04]]

    def test_no_mutual_impedance(self):
        mp, mq = build_m_matrices(make_line("l", "a", "b", (1, 2, 3), r=0.01, x=0.02))
        np.testing.assert_allclose(mp, -0.02 * np.eye(3), atol=1e-15)
        np.testing.assert_allclose(mq, -0.04 * np.eye(3), atol=1e-15)

    def test_mutual_entry(self):
        line = make_line("l", "a", "b", (1, 2, 3))
        r = np.array(line.r)
        x = np.array(line.x)
        r[0, 1] = r[1, 0] = 0.003
        x[0, 1] = x[1, 0] = 0.004
        line = line.__class__(**{**line.__dict__, "r": tuple(map(tuple, r)), "x": tuple(map(tuple, x))})
        mp, _ = build_m_matrices(line)
        assert mp[0, 1] == pytest.approx(0.003 - S3 * 0.004, abs=1e-15)
        assert mp[0, 1] == pytest.approx(-0.003928, abs=1e-6)

    def test_matches_printed_pattern(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            r = rng.uniform(0, 0.05, (3, 3))
            x = rng.uniform(0, 0.05, (3, 3))
            r, x = (r + r.T) / 2, (x + x.T) / 2
            line = make_line("l", "a", "b", (1, 2, 3))
            line = line.__class__(**{**line.__dict__, "r": tuple(map(tuple, r)), "x": tuple(map(tuple, x))})
            mp, mq = build_m_matrices(line)
            ep, eq = printed_m(r, x)
            np.testing.assert_array_equal(mp, ep)
            np.testing.assert_array_equal(mq, eq)

    @pytest.mark.parametrize("phases", [(1, 2), (1, 3), (2, 3)])
    def test_restriction_to_phase_subset(self, phases):
        rng = np.random.default_rng(3)
        r = rng.uniform(0, 0.05, (3, 3))
        x = rng.uniform(0, 0.05, (3, 3))
        r, x = (r + r.T) / 2, (x + x.T) / 2
        sel = [p - 1 for p in phases]
        line = make_line("l", "a", "b", phases)
        line = line.__class__(**{**line.__dict__, "r": tuple(map(tuple, r[np.ix_(sel, sel)])),
                                 "x": tuple(map(tuple, x[np.ix_(sel, sel)]))})
        mp, mq = build_m_matrices(line)
        ep, eq = printed_m(r, x)
        np.testing.assert_array_equal(mp, ep[np.ix_(sel, sel)])
        np.testing.assert_array_equal(mq, eq[np.ix_(sel, sel)])


class TestFlowEquations:
    def two_bus(self, **kw):
        return make_feeder([make_bus("i"), make_bus("j")], [make_gen("g", "i")], [make_line("e", "i", "j", **kw)])

    def test_shunt_free_loss_row(self):
        f = self.two_bus()
        keys = index_variables(f)
        rows = build_flow_equations(f, keys)
        assert named(rows[0], keys) == {VariableKey("p_flow", "e", 1, "from_to"): 1.0,
                                        VariableKey("p_flow", "e", 1, "to_from"): 1.0}

    def test_drop_row(self):
        f = self.two_bus(r=0.01, x=0.02)
        keys = index_variables(f)
        drop = build_flow_equations(f, keys)[2]
        assert drop.tag == ("line", "e", "drop", 1)
        assert named(drop, keys) == pytest.approx({
            VariableKey("w", "i", 1): 1.0, VariableKey("w", "j", 1): -1.0,
            VariableKey("p_flow", "e", 1, "from_to"): -0.02, VariableKey("q_flow", "e", 1, "from_to"): -0.04,
        }, abs=1e-15)

    def test_drop_row_with_tap_and_shunt(self):
        f = self.two_bus(r=0.01, x=0.02, tau=1.05, gs=0.001, bs=0.002)
        keys = index_variables(f)
        p_loss, q_loss, drop = build_flow_equations(f, keys)
        w_i, w_j = VariableKey("w", "i", 1), VariableKey("w", "j", 1)
        assert named(p_loss, keys)[w_i] == -0.001 and named(p_loss, keys)[w_j] == -0.001
        assert named(q_loss, keys)[w_i] == 0.002 and named(q_loss, keys)[w_j] == 0.002
        coefs = named(drop, keys)
        assert coefs[w_j] == -1.05
        # 1 - Mp*g^s + Mq*b^s with Mp=-0.02, Mq=-0.04
        assert coefs[w_i] == pytest.approx(1.0 + 0.02 * 0.001 - 0.04 * 0.002, abs=1e-15)

    def test_two_bus_fixture_row_count(self):
        f = feeder("two_bus_1ph")
        assert len(build_flow_equations(f, index_variables(f))) == 3


class TestAssemble:
    def test_single_bus(self):
        ls = assemble_centralized(single_bus_feeder())
        assert ls.shape == (2, 3)
        assert ls.c.tolist() == [1.0, 0.0, 0.0]

    def test_two_bus_dimensions(self):
        ls = system("two_bus_1ph")
        assert ls.shape == (4 + 4 + 3, 12)

    def test_bounds(self):
        ls = system("two_bus_1ph")
        lo = dict(zip(map(str, ls.var_table), ls.x_lo))
        hi = dict(zip(map(str, ls.var_table), ls.x_hi))
        assert (lo["w[b2,1]"], hi["w[b2,1]"]) == (0.81, 1.21)
        assert (lo["p_flow[l1,1,to_from]"], hi["p_flow[l1,1,to_from]"]) == (-2.0, 2.0)
        assert (lo["p_load[ld1,1]"], hi["p_load[ld1,1]"]) == (-math.inf, math.inf)
        assert (lo["p_gen[g1,1]"], hi["p_gen[g1,1]"]) == (0.0, 5.0)

    @pytest.mark.parametrize("name", FIXTURES)
    def test_no_orphan_columns(self, name):
        ls = system(name)
        used = np.asarray(abs(ls.A).sum(axis=0)).ravel() > 0
        bounded = np.isfinite(ls.x_lo) & np.isfinite(ls.x_hi)
        assert np.all(used | bounded)

    @pytest.mark.parametrize("name", FIXTURES)
    def test_oracle_point_satisfies_rows(self, name):
        ls = system(name)
        rep = check_feasibility(ls, oracle(name).x)
        assert rep.max_equality_violation <= 1e-9

    @pytest.mark.parametrize("name", FIXTURES)
    def test_row_tags_partition(self, name):
        ls = system(name)
        f = feeder(name)
        assert len(ls.row_tags) == ls.shape[0]
        owners = {(t.owner_kind, t.owner) for t in ls.row_tags}
        assert owners == {("bus", i) for i in f.buses} | {("line", e) for e in f.lines}

    def test_triplet_dump(self, tmp_path):
        ls = system("two_bus_1ph")
        path = tmp_path / "lp.txt"
        ls.dump_triplets(path)
        A = np.zeros(ls.shape)
        b = np.zeros(ls.shape[0])
        for line in path.read_text().splitlines():
            parts = line.split()
            if parts[0] == "A":
                A[int(parts[1]), int(parts[2])] = float(parts[3])
            elif parts[0] == "b":
                b[int(parts[1])] = float(parts[2])
        np.testing.assert_array_equal(A, ls.A.toarray())
        np.testing.assert_array_equal(b, ls.b)


class TestFeederAssembler:
    def test_estimator_params(self):
        est = FeederAssembler(validate=False)
        assert est.get_params() == {"validate": False}
        assert clone(est).validate is False

    def test_transform(self):
        ls = FeederAssembler().fit_transform(feeder("two_bus_1ph"))
        assert ls.shape == system("two_bus_1ph").shape

    def test_rejects_invalid_feeder(self):
        f = make_feeder([make_bus("b1")])
        with pytest.raises(FeederValidationError, match="no generator"):
            FeederAssembler().fit(f)

    def test_rejects_non_feeder(self):
        with pytest.raises(TypeError):
            FeederAssembler().transform(np.zeros(3))
