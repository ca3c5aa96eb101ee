import numpy as np
import pytest
import scipy.sparse as sp

from pobk.sparse import SparseMatrix, load_matrix_market
from pobk.suitesparse import MatrixUnavailable, fetch

_criteria: dict[int, list[bool]] = {}


def banded_system(rng, m, half_band=2, scramble=True, dominance=2.0):
    """Random consistent banded system, optionally symmetric-permuted."""
    offsets = list(range(-half_band, half_band + 1))
    diags = [rng.uniform(-1, 1, m - abs(o)) for o in offsets]
    M = sp.diags(diags, offsets, shape=(m, m)).tolil()
    M.setdiag(np.abs(M.diagonal()) + dominance * half_band + 0.5)
    M = M.tocsr()
    if scramble:
        p = rng.permutation(m)
        M = M[p][:, p]
    A = SparseMatrix.from_scipy(M)
    x_star = rng.uniform(-1, 1, m)
    return A, A.csr @ x_star, x_star


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def paper_matrix(name):
    """Load a collection matrix, failing (not skipping) when it is unavailable."""
    try:
        path = fetch(name, timeout=20)
    except MatrixUnavailable as exc:
        reason = str(exc)
    else:
        return load_matrix_market(path)
    pytest.fail(f"matrix {name} unavailable: {reason}", pytrace=False)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for mark in getattr(report, "acceptance_marks", ()):
        _criteria.setdefault(mark, []).append(report.passed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.acceptance_marks = [m.args[0] for m in item.iter_markers("acceptance")]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        res = _criteria[n]
        status = "PASS" if all(res) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status} ({sum(res)}/{len(res)} checks)")
