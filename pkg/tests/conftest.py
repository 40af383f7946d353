import os
import re

import numpy as np
import pytest
from hypothesis import settings

from hdivmg.mesh import MeshHierarchy, Rectangle, StepDomain, build_structured_mesh
from hdivmg.problems import cavity_mesh, step_mesh

settings.register_profile("artifact", max_examples=25, deadline=None)
settings.load_profile("artifact")


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Per-criterion verdicts: ``acceptance(n, ok, detail)`` records one check."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(criterion, ok, detail):
        node = os.environ.get("PYTEST_CURRENT_TEST", "").rsplit(" ", 1)[0]
        store.setdefault(criterion, []).append((bool(ok), detail, node))
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    return record


def pytest_runtest_logreport(report):
    """Count acceptance tests that fail before recording a verdict."""
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m or not report.failed:
        return
    store = _config.stash.setdefault(ACCEPTANCE_KEY, {})
    checks = store.setdefault(int(m.group(1)), [])
    if not any(node == report.nodeid for _, _, node in checks):
        name = report.nodeid.split("::", 1)[1]
        checks.append((False, f"{name} raised {report.when}", report.nodeid))


_config = None


def pytest_configure(config):
    global _config
    _config = config


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(store):
        checks = store[crit]
        ok = all(c[0] for c in checks)
        failed = [d for good, d, _ in checks if not good]
        line = f"criterion {crit}: {'PASS' if ok else 'FAIL'} ({len(checks) - len(failed)}/{len(checks)} checks)"
        if failed:
            line += "; failing: " + " | ".join(failed)
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def square4():
    return build_structured_mesh(Rectangle(), 4)


@pytest.fixture(scope="session")
def step2():
    return build_structured_mesh(StepDomain(), 2)


@pytest.fixture(scope="session")
def cavity_h3():
    return MeshHierarchy.build(cavity_mesh(), 3)


@pytest.fixture(scope="session")
def step_h2():
    return MeshHierarchy.build(step_mesh(), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
