import pytest

from unigan.trainer import RunConfig


@pytest.fixture
def tiny_config() -> RunConfig:
    """A few-second configuration for plumbing tests."""
    return RunConfig(n_train=400, n_eval=300, g_width=16, d_width=16, t_width=16, iterations=30,
                     eval_interval=10, eval_samples=200, batch_label=32, batch_std=16)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
