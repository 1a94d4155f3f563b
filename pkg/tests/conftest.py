import numpy as np
import pytest

from finesparse import _backend

BACKENDS = sorted(_backend.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route the kernel entry points through one backend for the test."""
    mod = _backend.available_backends()[request.param]
    monkeypatch.setattr(_backend, "hilbert_keys", mod.hilbert_keys)
    monkeypatch.setattr(_backend, "block_sparse_attention", mod.block_sparse_attention)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def softmax64(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert."""

    def record(number, ok, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        print(ACCEPTANCE_LINES[-1][1])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
