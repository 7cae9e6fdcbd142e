import sys
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
sys.path.insert(0, str(HERE))


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mr_panel():
    from riskagent.data import align_calendar, compute_indicators, load_price_csv
    return compute_indicators(align_calendar(load_price_csv(FIXTURES / "mean_reverting.csv")))


def make_panel(close, tickers=None):
    """Bare panel (no indicators) from a T x N close grid; OHLC all equal to close."""
    from datetime import date, timedelta
    from riskagent.data import PricePanel
    close = np.asarray(close, dtype=np.float64)
    t, n = close.shape
    tickers = tuple(tickers or [f"S{i}" for i in range(n)])
    dates = tuple(date(2021, 1, 1) + timedelta(days=k) for k in range(t))
    return PricePanel(tickers, dates, close.copy(), close.copy(), close.copy(), close.copy(),
                      np.ones((t, n)), np.zeros((t, n), dtype=bool))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
