import numpy as np
import pytest

from restain.tensornet.autograd import Tensor

ACCEPTANCE_RESULTS: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[k])


def grad_check(fn, inputs: list[Tensor], eps: float = 1e-6, max_coords: int = 24, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` maps the list of input tensors to a scalar tensor; it is rebuilt for
    each evaluation. At most ``max_coords`` randomly chosen coordinates per input
    are probed. Error per input is ||g_a - g_n|| / max(||g_a||, ||g_n||, 1e-12).
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.zero_grad()
    out = fn(inputs)
    out.backward()
    analytic = [t.grad.copy() for t in inputs]
    worst = 0.0
    for t, g_a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(max_coords, flat.size), replace=False)
        num, ana = [], []
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            plus = float(fn(inputs).data)
            flat[i] = old - eps
            minus = float(fn(inputs).data)
            flat[i] = old
            num.append((plus - minus) / (2 * eps))
            ana.append(g_a.reshape(-1)[i])
        num, ana = np.array(num), np.array(ana)
        denom = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-12)
        worst = max(worst, float(np.linalg.norm(num - ana) / denom))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
