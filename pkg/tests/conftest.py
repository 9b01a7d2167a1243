import pytest
from hypothesis import HealthCheck, settings

from aisc import _accel

settings.register_profile("default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=[True, False], ids=["jit", "python"])
def jit(request):
    """Run a test through the numba engine and through the reference interpreter."""
    if request.param and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    return request.param


# Acceptance criteria report one line each at the end of the session.  A
# criterion passes only when every part recorded under its number passed.
_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def acceptance():
    def record(number, ok, detail):
        _ACCEPTANCE.setdefault(number, []).append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[number]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {number}: " + " ; ".join(d for _, d in parts))
