import numpy as np
import pytest

from beamtasnet.diffnet import Tensor, backward


def numeric_grad(fn, arrays, eps=1e-6):
    """Central finite differences of scalar ``fn(*arrays)`` w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            fp = fn(*arrays)
            a[i] = old - eps
            fm = fn(*arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def gradcheck(op, arrays, eps=1e-6):
    """Compare reverse-mode gradients of ``sum(op(...) * probe)`` against finite differences."""
    rng = np.random.default_rng(123)
    probe = None

    def scalar(*arrs):
        nonlocal probe
        out = op(*[Tensor(x) for x in arrs]).value
        if probe is None:
            probe = rng.standard_normal(out.shape)
        return float(np.sum(out * probe))

    scalar(*arrays)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    from beamtasnet.diffnet import functional as F
    loss = F.sum(F.mul(out, probe))
    backward(loss)
    analytic = [t.grad for t in tensors]
    numeric = numeric_grad(scalar, [a.copy() for a in arrays], eps)
    return max(max_rel_err(a, n) for a, n in zip(analytic, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
