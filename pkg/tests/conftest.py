import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from safereach.harness import bundled_example_path  # noqa: E402
from safereach.mdp import Mdp, Policy  # noqa: E402

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def example_mdp() -> Mdp:
    return Mdp.from_json(bundled_example_path())


@pytest.fixture(scope="session")
def pi_star_example(example_mdp) -> Policy:
    """The constrained optimum, written out by hand (state ids 1..3)."""
    q = 0.236 / 0.512
    probs = np.zeros((5, 2))
    probs[0] = [q, 1 - q]
    probs[1] = [0.0, 1.0]
    probs[2] = [1.0, 0.0]
    return Policy(probs)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda s: (len(s), s)):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {cid}: {detail}")
