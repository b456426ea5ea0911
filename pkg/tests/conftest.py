import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from activepose import harness as H  # noqa: E402


class TrainedAgents:
    """Default-config agents shared across test modules; trained once per session."""

    def __init__(self):
        self.cfg = H.ExperimentConfig()
        self.scenes = H.build_scenes(self.cfg)
        self._runs: dict[bool, dict] = {}
        self.seconds: dict[tuple[bool, int], float] = {}

    def results(self, base_only=False) -> dict:
        if base_only not in self._runs:
            runs = {}
            for seed in self.cfg.seeds:
                t = time.perf_counter()
                runs[seed] = H.train_agent(self.cfg, seed, self.scenes, base_only)
                self.seconds[base_only, seed] = time.perf_counter() - t
            self._runs[base_only] = runs
        return self._runs[base_only]

    def params(self, base_only=False) -> dict:
        return {s: r.params for s, r in self.results(base_only).items()}


@pytest.fixture(scope="session")
def trained():
    return TrainedAgents()


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one acceptance line: report(n, ok, detail)."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
