import functools

import numpy as np
import pytest

from distopf_admm.admm import Settings, solve
from distopf_admm.decompose import build_component_graph, partition, reduce_model
from distopf_admm.feeder import Bus, Feeder, Generator, LineSegment, Load
from distopf_admm.fixtures import fixture_names, load_fixture
from distopf_admm.lp import assemble_centralized
from distopf_admm.oracle import reference_solve

FIXTURES = fixture_names()

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@functools.cache
def feeder(name):
    return load_fixture(name)


@functools.cache
def system(name):
    return assemble_centralized(feeder(name))


@functools.cache
def pre_model(name):
    return partition(system(name), build_component_graph(feeder(name)))


@functools.cache
def model(name):
    return reduce_model(pre_model(name))


@functools.cache
def oracle(name):
    return reference_solve(system(name))


@functools.cache
def admm_run(name, eps_rel=1e-4, rho=100.0, workers=1):
    return solve(model(name), Settings(rho=rho, eps_rel=eps_rel, workers=workers))


def make_bus(id, phases=(1,), w=(0.81, 1.21), g_sh=None, b_sh=None):
    n = len(phases)
    return Bus(id, tuple(phases), (w[0],) * n, (w[1],) * n,
               tuple(g_sh or (0.0,) * n), tuple(b_sh or (0.0,) * n))


def make_gen(id, bus, phases=(1,), p=(0.0, 5.0), q=(-5.0, 5.0)):
    n = len(phases)
    return Generator(id, bus, tuple(phases), (p[0],) * n, (p[1],) * n, (q[0],) * n, (q[1],) * n)


def make_line(id, i, j, phases=(1,), r=0.01, x=0.02, tau=1.0, gs=0.0, bs=0.0):
    n = len(phases)
    eye = np.eye(n)
    return LineSegment(
        id, i, j, tuple(phases),
        tuple(map(tuple, r * eye)), tuple(map(tuple, x * eye)),
        (gs,) * n, (bs,) * n, (gs,) * n, (bs,) * n, (tau,) * n,
        (-3.0,) * n, (3.0,) * n, (-3.0,) * n, (3.0,) * n,
    )


def make_load(id, bus, phases=(1,), a=0.1, b=0.05, alpha=0.0, beta=0.0, connection="wye"):
    n = len(phases)
    return Load(id, bus, connection, tuple(phases), (a,) * n, (b,) * n, (alpha,) * n, (beta,) * n)


def make_feeder(buses, gens=(), lines=(), loads=()):
    return Feeder({b.id: b for b in buses}, {g.id: g for g in gens},
                  {e.id: e for e in lines}, {l.id: l for l in loads})


@pytest.fixture(params=FIXTURES)
def fixture_name(request):
    return request.param
