"""Shared test helpers: an independent finite-difference gradient oracle."""

import numpy as np

from ttsembed import autodiff as ad


def numeric_gradient(fn, tensor, eps=1e-5):
    """Central finite differences of scalar fn() w.r.t. tensor.data."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn()
        flat[i] = orig - eps
        f_minus = fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * eps)
    return grad


def check_gradients(build_loss, tensors, eps=1e-5, tol=1e-4):
    """Compare autodiff gradients of build_loss() against central differences.

    build_loss must construct the graph from the given tensors and return the
    scalar loss Tensor. Returns the max relative error seen.
    """
    for t in tensors:
        t.grad = None
    with ad.Tape() as tape:
        loss = build_loss()
        ad.backward(loss, tape)
    auto = [np.array(t.grad) if t.grad is not None else np.zeros_like(t.data)
            for t in tensors]

    def forward():
        return float(build_loss().data)

    worst = 0.0
    for t, g_auto in zip(tensors, auto):
        g_num = numeric_gradient(forward, t, eps)
        denom = np.maximum(np.maximum(np.abs(g_auto), np.abs(g_num)), 1e-6)
        rel = np.abs(g_auto - g_num) / denom
        rel[(np.abs(g_auto) < 1e-7) & (np.abs(g_num) < 1e-7)] = 0.0
        worst = max(worst, float(rel.max()))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3e}"
    return worst


# ---------------------------------------------------------------------------
# acceptance summary: tests/test_acceptance.py registers one line per
# criterion; print them after the run so the verdicts are visible in one place
# ---------------------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
