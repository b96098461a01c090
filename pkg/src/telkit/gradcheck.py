"""Finite-difference gradient verification.

Central differences are the independent oracle for every backward rule in
the toolkit: perturb one coordinate by +-h, evaluate the loss twice, and
compare the slope against what reverse mode produced.  Run it in float64;
float32 has nowhere near the headroom for h = 1e-5.

Relative error convention: |ad - fd| / max(|ad|, |fd|), with differences
below ``atol`` treated as zero so that two tiny-but-honest gradients do
not blow up the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward, no_grad
from .errors import GraphError, NumericalError


@dataclass
class GradCheckReport:
    """Per-coordinate outcome of one finite-difference sweep."""

    max_rel_err: float = 0.0
    n_checked: int = 0
    n_failed: int = 0
    tol: float = 0.0
    worst: tuple = ()  # (tensor name, flat index, ad, fd)
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.n_failed == 0

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad check {status}: {self.n_checked} coords, "
            f"max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e})"
        )


def _rel_err(ad, fd, atol):
    diff = abs(ad - fd)
    if diff <= atol:
        return 0.0
    return diff / max(abs(ad), abs(fd))


def check_gradients(loss_fn, tensors, h=1e-5, tol=1e-4, atol=1e-8, max_coords=None, rng=None):
    """Compare reverse-mode gradients of ``loss_fn()`` against central differences.

    loss_fn builds and returns a fresh scalar loss Tensor from the leaf
    ``tensors`` (a name -> Tensor mapping); it must be deterministic, which
    is verified by evaluating it twice before any perturbation.  When
    ``max_coords`` is given, at most that many coordinates per tensor are
    probed (chosen by ``rng``), which keeps big sweeps inside a time budget.
    """
    for t in tensors.values():
        if t.data.dtype != np.float64:
            raise GraphError("gradient checking requires float64 tensors")

    loss = loss_fn()
    with no_grad():
        replay = loss_fn()
    if not np.allclose(loss.data, replay.data, rtol=0, atol=0, equal_nan=True):
        raise NumericalError(
            f"loss_fn is not deterministic: {float(loss.data)!r} vs {float(replay.data)!r}"
        )

    for t in tensors.values():
        t.zero_grad()
    backward(loss)

    report = GradCheckReport(tol=tol)
    for name, t in sorted(tensors.items()):
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idxs = (rng or np.random.default_rng(0)).choice(flat.size, size=max_coords, replace=False)
            idxs.sort()
        errs = []
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                up = float(loss_fn().data)
            flat[i] = orig - h
            with no_grad():
                down = float(loss_fn().data)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            err = _rel_err(float(gflat[i]), fd, atol)
            errs.append(err)
            report.n_checked += 1
            if err > report.max_rel_err:
                report.max_rel_err = err
                report.worst = (name, int(i), float(gflat[i]), fd)
            if err > tol:
                report.n_failed += 1
        report.per_tensor[name] = max(errs) if errs else 0.0
    return report


def grad_check(fn, point, h=1e-5, tol=1e-4):
    """Check d fn(x) / dx at ``point`` for a scalar-valued tensor function.

    ``point`` is used as the (float64) evaluation point; a fresh leaf
    tensor is created so the caller's data is never mutated.
    """
    leaf = Tensor(np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64),
                  requires_grad=True)
    return check_gradients(lambda: fn(leaf), {"x": leaf}, h=h, tol=tol)
