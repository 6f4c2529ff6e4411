"""Shared pytest plumbing.

`criterion_line` writes through the terminal reporter so the acceptance
suite's PASS/FAIL lines are visible even while pytest captures stdout.
"""

import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def criterion_line(request):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(msg: str) -> None:
        if reporter is not None:
            reporter.ensure_newline()
            reporter.write_line(msg)
        else:
            print(msg)

    return emit
