import json
from pathlib import Path

import pytest

from drp.config import RunConfig
from drp.gateway import Gateway
from drp.mock import SyntheticResponder

DATA = Path(__file__).parent / "data"
CORPUS6 = DATA / "corpus6.jsonl"


def fixture_config(tmp_path: Path, **overrides) -> dict:
    cfg = {
        "corpus": str(CORPUS6),
        "cache_dir": str(tmp_path / "cache"),
        "output_dir": str(tmp_path / "runs"),
        "fixture_dir": str(tmp_path / "fixtures"),
        "M": 2,
        "cluster_k": 3,
        "retrieval_k": 4,
        "temperatures": [0.0, 0.8],
        "embedding": {"kind": "hash", "dim": 128, "seed": 0},
        "max_concurrency": 4,
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture
def corpus6_path():
    return CORPUS6


@pytest.fixture
def config_file(tmp_path):
    """Config for the 6-user fixture corpus with synthetic fixtures recorded for all modes."""
    cfg = fixture_config(tmp_path)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    from drp.cli import main

    for mode in ("drp", "rag", "non_p"):
        assert main(["fixtures", "-c", str(path), "--mode", mode]) == 0
    return path


class CountingResponder:
    """Synthetic responder that records every request it answers."""

    def __init__(self):
        self.inner = SyntheticResponder()
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        return self.inner(request)


@pytest.fixture
def synthetic_gateway():
    responder = CountingResponder()
    gw = Gateway(responder=responder, max_concurrency=4)
    gw.responder_log = responder
    return gw


@pytest.fixture
def base_cfg():
    return RunConfig(M=2, cluster_k=3, retrieval_k=4, embedding={"kind": "hash", "dim": 128})


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash.get(ACCEPTANCE_KEY, [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, elapsed, limit, note in sorted(rows):
        budget = f" (limit {limit:g}s)" if limit else ""
        tail = f" -- {note}" if note else ""
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} [{elapsed:.2f}s{budget}]{tail}"
        )
