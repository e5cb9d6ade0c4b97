"""Central finite-difference gradient checking.

The numeric side never touches the tape: it re-evaluates the loss closure
with perturbed parameter buffers, so it is an independent oracle for the
analytic gradients produced by `tensor.backward`.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import backward

DEFAULT_EPS = 1e-6


@dataclass
class ParamReport:
    name: str
    rel_error: float
    checked_entries: int


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    params: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    def __str__(self):
        lines = [f"{'PASS' if self.passed else 'FAIL'} "
                 f"max_rel_error={self.max_rel_error:.3e} tol={self.tol:.1e}"]
        for p in sorted(self.params, key=lambda p: -p.rel_error):
            lines.append(f"  {p.rel_error:.3e}  {p.name} ({p.checked_entries} entries)")
        return "\n".join(lines)


def _rel_error(analytic, numeric):
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    # below this magnitude, central-difference roundoff noise swamps any
    # relative comparison; fall back to the absolute error
    if denom < 1e-4:
        return diff
    return diff / denom


def grad_check(f, params, eps=DEFAULT_EPS, tol=1e-5, max_entries=None, rng=None):
    """Compare analytic gradients of scalar `f()` against central differences.

    `f` must be deterministic and close over `params`.  With `max_entries`
    set, a random (seeded) subset of entries per parameter is probed, which
    keeps large models tractable.  Returns a report; passing means the max
    relative error over all parameters is <= `tol`.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {id(p): p.grad.copy() for p in params}

    reports = []
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = np.arange(n)
        ana = analytic[id(p)].reshape(-1)[idx]
        num = np.empty_like(ana)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            hi = np.asarray(f().data).item()
            flat[i] = orig - eps
            lo = np.asarray(f().data).item()
            flat[i] = orig
            num[j] = (hi - lo) / (2.0 * eps)
        reports.append(ParamReport(p.name or f"param{id(p)}",
                                   _rel_error(ana, num), len(idx)))
    worst = max((r.rel_error for r in reports), default=0.0)
    return GradCheckReport(max_rel_error=worst, tol=tol, params=reports)
