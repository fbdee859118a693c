import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

ACCEPTANCE_TITLES = {
    "test_criterion_1_functional_crypto": "1 functional crypto",
    "test_criterion_2_keccak_sponge": "2 Keccak-f[400] and sponge AE",
    "test_criterion_3_hwce_oracle": "3 HWCE oracle equivalence",
    "test_criterion_4_throughput_anchors": "4 throughput anchors",
    "test_criterion_5_efficiency_anchors": "5 efficiency anchors",
    "test_criterion_6_use_cases": "6 use-case reproduction",
    "test_criterion_7_simulator_properties": "7 simulator properties",
}


@pytest.fixture
def vectors_dir():
    return HERE / "vectors"


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "").split("::")[-1]
            if name in ACCEPTANCE_TITLES and rep.when in ("call", "setup"):
                rows[name] = ("PASS" if outcome == "passed" else "FAIL", rep.duration)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, title in ACCEPTANCE_TITLES.items():
        if name in rows:
            verdict, dur = rows[name]
            terminalreporter.write_line(f"criterion {title}: {verdict} ({dur:.1f} s)")
