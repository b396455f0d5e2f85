import os

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-length training runs, enabled with DCSCAN_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("DCSCAN_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set DCSCAN_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
