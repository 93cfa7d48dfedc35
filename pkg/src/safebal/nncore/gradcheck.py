"""Verify analytic gradients against central finite differences.

The loss function is evaluated in double precision with h = 1e-5 by default;
relative error below 1e-4 passes. This is the independent oracle for every
backward pass in the package, so it never calls any backward code itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    n_checked: int
    per_param: dict = field(default_factory=dict)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max relative error {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:.1e}, {self.n_checked} entries)"
        )


def check_gradients(loss_fn, params, tolerance=1e-4, h=1e-5, max_entries_per_param=None, rng=None):
    """Compare loss_fn's analytic gradients to central finite differences.

    loss_fn(params) must return (scalar_loss, grads_dict). The finite
    difference side perturbs parameter entries in place and only uses the
    scalar loss. If max_entries_per_param is set, a deterministic subset of
    entries per tensor is checked (rng required).
    """
    _, grads = loss_fn(params)
    max_err = 0.0
    per_param = {}
    n_checked = 0
    for name, p in params.items():
        flat = p.ravel()
        idx = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            if rng is None:
                raise ValueError("rng required when subsampling entries")
            idx = rng.choice(idx, size=max_entries_per_param, replace=False)
        g_flat = grads[name].ravel()
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_fn(params)
            flat[i] = orig - h
            lm, _ = loss_fn(params)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            analytic = g_flat[i]
            # The floor absorbs the FD cancellation noise (~eps*|loss|/2h,
            # about 1e-11 here): near-zero entries are checked absolutely
            # at the floor scale instead of drowning in relative noise.
            denom = max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic - numeric) / denom)
            n_checked += 1
        per_param[name] = worst
        max_err = max(max_err, worst)
    return GradCheckReport(
        max_rel_error=max_err,
        tolerance=tolerance,
        passed=max_err < tolerance,
        n_checked=n_checked,
        per_param=per_param,
    )
