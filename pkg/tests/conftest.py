import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def pytest_configure(config):
    config.apr_acceptance = []


@pytest.fixture
def report(request):
    """Records one pass/fail line per acceptance criterion for the terminal summary."""
    def emit(n, ok, detail):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {n}: {status}  {detail}"
        request.config.apr_acceptance.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "apr_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
