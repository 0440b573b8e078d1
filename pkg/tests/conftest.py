from __future__ import annotations

import numpy as np
import pytest

from scellar.store import Store, build_store
from scellar.synth import enriched_raw, write_h5ad

# verdict lines recorded by the acceptance tests; emitted after capture
# ends so they show up even in piped, fully captured runs
ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def enriched_paths(tmp_path_factory):
    """The enriched-gene fixture as h5ad + freshly built store."""
    root = tmp_path_factory.mktemp("enriched")
    h5ad = root / "fix.h5ad"
    store_path = root / "fix.store"
    raw = enriched_raw()
    write_h5ad(raw, str(h5ad))
    build_store(raw, str(store_path))
    return {"h5ad": h5ad, "store": store_path, "raw": raw}


@pytest.fixture()
def enriched_store(enriched_paths):
    return Store(enriched_paths["store"])


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
