"""Shared fixtures; the session-scoped reference run feeds the slow checks."""

import pytest

from .protocol import run_full_protocol


@pytest.fixture(scope="session")
def protocol_metrics(tmp_path_factory):
    """Full reference pipeline, run once: corpus, trainings, sweeps,
    attribution, silhouettes.  Slow (several minutes); only the end-to-end
    checks request it."""
    return run_full_protocol(tmp_path_factory.mktemp("protocol_run1"))
