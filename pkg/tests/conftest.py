"""Shared fixtures and independent oracles.

The oracles here deliberately take the slow, explicit route (materialized
kernels, exhaustive enumeration, central differences) so they never share a
code path with the implementation they check.
"""

import itertools

import numpy as np
import pytest

from ondpp.core import NdppModel, block_skew


def explicit_kernel(model):
    """The full n x n kernel. Only ever used at desk scale in tests."""
    return model.V.T @ model.V + model.B.T @ model.C @ model.B


def explicit_minor(model, S):
    L = explicit_kernel(model)
    S = list(S)
    return float(np.linalg.det(L[np.ix_(S, S)])) if S else 1.0


def explicit_logdet_normalizer(V, B, C):
    L = V.T @ V + B.T @ C @ B
    sign, val = np.linalg.slogdet(L + np.eye(L.shape[0]))
    assert sign > 0
    return float(val)


def enumerate_opt(model, k):
    """OPT_k by explicit enumeration over the materialized kernel."""
    L = explicit_kernel(model)
    best = -np.inf
    for S in itertools.combinations(range(model.n), k):
        best = max(best, float(np.linalg.det(L[np.ix_(S, S)])))
    return best


def partition_reference(model, order, k):
    """Block-wise greedy with blocks built up front from ceil((t+1)k/n).

    Each block contributes the first position (in stream order) whose item
    maximizes the explicit minor of S plus that item, provided it is positive.
    """
    n = len(order)
    blocks = {}
    for t, item in enumerate(order):
        blocks.setdefault(-(-(t + 1) * k // n), []).append(item)
    S = []
    for i in sorted(blocks):
        best, best_val = None, 0.0
        for item in blocks[i]:
            val = explicit_minor(model, sorted(S + [item]))
            if val > best_val:
                best, best_val = item, val
        if best is not None:
            S = sorted(S + [best])
    return S


def central_difference(fun, X, h=1e-6):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        G[idx] = (fun(X + E) - fun(X - E)) / (2 * h)
    return G


def skew_directional(fun, C, h=1e-6):
    """Central differences of fun along E_ij - E_ji for i < j."""
    d = C.shape[0]
    out = []
    for i, j in itertools.combinations(range(d), 2):
        E = np.zeros_like(C)
        E[i, j], E[j, i] = h, -h
        out.append((fun(C + E) - fun(C - E)) / (2 * h))
    return np.array(out)


def skew_components(G):
    d = G.shape[0]
    return np.array([G[i, j] - G[j, i] for i, j in itertools.combinations(range(d), 2)])


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def make_model(n, d, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    std = scale / np.sqrt(d)
    return NdppModel(rng.normal(0, std, (d, n)), rng.normal(0, std, (d, n)), block_skew(d, rng))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, text = marker.args
    _ACCEPTANCE[number] = ("PASS" if report.passed else "FAIL", text)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, text = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {text}")
