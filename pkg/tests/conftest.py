import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from osacnn.synth import SynthSpec, generate_cohort  # noqa: E402


@pytest.fixture(scope="session")
def default_cohort(tmp_path_factory):
    """The default desk-scale synthetic cohort (8 subjects per class, 20 min, 64 Hz)."""
    return generate_cohort(SynthSpec(), tmp_path_factory.mktemp("synth-default"))


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    spec = SynthSpec(subjects_per_class=2, duration=180.0, awake_lead=20.0, awake_tail=10.0, seed=11)
    return generate_cohort(spec, tmp_path_factory.mktemp("synth-small"))


_CRITERIA: list[str] = []


class Criterion:
    """Collects checks for one acceptance criterion and reports a single PASS/FAIL line."""

    def __init__(self, name: str) -> None:
        self.name = name
        self.failures: list[str] = []
        self.notes: list[str] = []

    def check(self, ok: bool, detail: str) -> None:
        (self.notes if ok else self.failures).append(detail)

    def __enter__(self) -> "Criterion":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is not None:
            self.failures.append(f"{exc_type.__name__}: {exc}")
        status = "FAIL" if self.failures else "PASS"
        detail = "; ".join(self.failures or self.notes)
        line = f"{status}  {self.name}" + (f"  [{detail}]" if detail else "")
        _CRITERIA.append(line)
        print(line)
        if exc is None and self.failures:
            raise AssertionError(line)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
