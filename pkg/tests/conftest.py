from __future__ import annotations

import pytest

from sketchrender.denoiser import DenoiserConfig, init_denoiser, load_checkpoint
from sketchrender.harness import shipped_checkpoint

TINY_SKETCH = DenoiserConfig(widths=(32, 32))
TINY_RENDER = DenoiserConfig(widths=(8,))


@pytest.fixture(scope="session")
def sketch_path():
    return shipped_checkpoint("sketch")


@pytest.fixture(scope="session")
def render_path():
    return shipped_checkpoint("render")


@pytest.fixture(scope="session")
def sketch_model(sketch_path):
    return load_checkpoint(sketch_path).model()


@pytest.fixture(scope="session")
def render_model(render_path):
    return load_checkpoint(render_path).model()


@pytest.fixture(scope="session")
def tiny_pair():
    return init_denoiser(TINY_SKETCH, 0), init_denoiser(TINY_RENDER, 1)


# ---------------------------------------------------------------- acceptance report
_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)`` then assert."""

    def record(n: int, ok: bool, detail: str) -> None:
        _CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
