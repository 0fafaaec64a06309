import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from intanfactor import synth  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def small_synth():
    """120 firms over 2001-01..2004-12, shared read-only across tests."""
    return synth.generate(synth.SynthSpec(n_firms=120, window="2001-01..2004-12", seed=7))


@pytest.fixture(scope="session")
def small_panel(small_synth):
    return small_synth.panel()


STUDY_CONFIG = """\
# synthetic study over two five-year halves
fundamentals = data/fundamentals.csv
returns = data/returns.csv
factors = data/factors.csv
early_window = 2001-01..2005-12
late_window = 2006-01..2010-12
bubble_window = 2007-01..2008-12
output_dir = out
"""


def make_study_dir(root, n_firms=150, seed=11, extra=""):
    """Synthetic inputs plus a config file under ``root``; returns the config path."""
    synth.generate_files(synth.SynthSpec(n_firms=n_firms, seed=seed), root / "data")
    cfg = root / "study.cfg"
    cfg.write_text(STUDY_CONFIG + extra)
    return cfg


@pytest.fixture(scope="session")
def study_config(tmp_path_factory):
    return make_study_dir(tmp_path_factory.mktemp("study"))


def pytest_terminal_summary(terminalreporter):
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
