import numpy as np
import pytest
import torch

from viewpose.seeding import enable_determinism

enable_determinism()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference(fn, x: torch.Tensor, eps: float) -> torch.Tensor:
    """Numerical Jacobian of ``fn`` (any output shape) w.r.t. ``x``, shape (out, in)."""
    x = x.detach().clone()
    flat = x.view(-1)
    cols = []
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        plus = fn(x).detach().reshape(-1).clone()
        flat[i] = orig - eps
        minus = fn(x).detach().reshape(-1).clone()
        flat[i] = orig
        cols.append((plus - minus) / (2 * eps))
    return torch.stack(cols, dim=1)


def autograd_jacobian(fn, x: torch.Tensor) -> torch.Tensor:
    return torch.autograd.functional.jacobian(fn, x).reshape(-1, x.numel())


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).norm() / max(float(a.norm()), float(b.norm()), 1e-12))


# acceptance criteria register a one-line verdict here; printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, text: str) -> None:
    ACCEPTANCE[number] = f"AC{number:<2d} {'PASS' if passed else 'FAIL'}  {text}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
