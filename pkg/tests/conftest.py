import os

import torch
from hypothesis import HealthCheck, settings

settings.register_profile("ci", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=15, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

GRAD_RTOL = 1e-4


def fd_gradient(fn, inputs, eps=1e-6):
    """Central finite differences of scalar ``fn(*inputs)`` w.r.t. every input."""
    grads = []
    for x in inputs:
        g = torch.zeros_like(x)
        flat, gflat = x.view(-1), g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn(*inputs))
            flat[i] = orig - eps
            lo = float(fn(*inputs))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def grad_rel_error(fn, inputs, eps=1e-6):
    """max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf) over all inputs."""
    inputs = [x.detach().clone().double().requires_grad_(True) for x in inputs]
    analytic = torch.autograd.grad(fn(*inputs), inputs)
    with torch.no_grad():
        numeric = fd_gradient(fn, [x.detach().clone() for x in inputs], eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(a.abs().max().item(), n.abs().max().item(), 1e-12)
        worst = max(worst, (a - n).abs().max().item() / scale)
    return worst



# acceptance criteria register here; the terminal summary prints one line each
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, label = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {label}")
