import sys

import pytest
from hypothesis import settings

# timing-based deadlines flake on a loaded single-core box
settings.register_profile("quasidyn", deadline=None)
settings.load_profile("quasidyn")


def _acceptance_results():
    for mod in list(sys.modules.values()):
        res = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if isinstance(res, dict) and res:
            return res
    return {}


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    results = _acceptance_results()
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n].line())
