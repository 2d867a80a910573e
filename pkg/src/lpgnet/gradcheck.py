"""Central-difference gradient checking.

The error for one coordinate is

    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

and a check reports the worst coordinate over everything it sampled.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .data import Dialogue, DialogueBatch, FeatureHeader, pad_batch
from .errors import ContractError
from .model import LpgNet
from .rng import generator
from .tensor import Tensor, no_grad, softmax_lastdim

FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    def per_group(self, depth: int = 2) -> dict[str, float]:
        groups: dict[str, float] = {}
        for name, err in self.per_param.items():
            key = ".".join(name.split(".")[:depth])
            groups[key] = max(groups.get(key, 0.0), err)
        return groups

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def _value(f: Callable[[], Tensor]) -> float:
    with no_grad():
        return f().item()


def finite_difference_report(f: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-5,
                             max_coords: int | None = None, rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare backprop gradients of ``f`` with central differences.

    ``f`` takes no arguments and reads the current values of ``params``.
    With ``max_coords`` set, at most that many coordinates per tensor are
    sampled (uniformly, without replacement).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    base = _value(f)
    if _value(f) != base:
        raise ContractError("f is not deterministic: two baseline evaluations differ")
    for p in params.values():
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in params.items()}
    rng = rng or generator(0, "gradcheck")
    report = GradCheckReport(0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        grad = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = _value(f)
            flat[i] = orig - eps
            down = _value(f)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = grad[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), FLOOR)
            worst = max(worst, err)
        report.per_param[name] = worst
        report.checked += len(coords)
        report.max_rel_error = max(report.max_rel_error, worst)
    return report


def finite_difference_check(f: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-5,
                            max_coords: int | None = None) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    return finite_difference_report(f, params, eps, max_coords).max_rel_error


def tiny_problem(seed: int = 0, d: int = 8, f_t: int = 6, f_a: int = 5, num_classes: int = 4,
                 lengths=(3, 2), tau: float = 1.0, lambdas=(1.5, 1.0, 0.3)) -> tuple[LpgNet, DialogueBatch]:
    """A small LPGNet in eval mode plus a padded batch (B=2, U=3 by default)."""
    rng = generator(seed, "gradcheck", "data")
    dialogues = [
        Dialogue(f"d{i}", rng.standard_normal((n, f_t)), rng.standard_normal((n, f_a)),
                 rng.integers(0, num_classes, size=n))
        for i, n in enumerate(lengths)
    ]
    batch = pad_batch(dialogues, len(dialogues))[0]
    header = FeatureHeader(f_t, f_a, num_classes, tuple(str(k) for k in range(num_classes)))
    model = LpgNet(header.f_t, header.f_a, num_classes, d=d, dropout=0.0, rng=generator(seed, "gradcheck", "init"),
                   tau=tau, lambdas=lambdas)
    # non-trivial running statistics so eval-mode batch norm is exercised
    for path in model.lpia.paths.values():
        path.bn.running_mean[:] = 0.1 * rng.standard_normal(d)
        path.bn.running_var[:] = rng.uniform(0.5, 1.5, size=d)
        path.bn.gamma.data[:] = rng.uniform(0.5, 1.5, size=d)
        path.bn.beta.data[:] = 0.1 * rng.standard_normal(d)
    model.eval()
    return model, batch


def full_loss_check(seed: int = 0, eps: float = 1e-5, freeze_students: bool = False,
                    max_coords: int | None = None, tau: float = 1.0) -> GradCheckReport:
    """Gradient check of the total objective on :func:`tiny_problem`.

    The teacher's softened distribution is frozen at its baseline value: the
    distillation term treats it as a constant target, so the function being
    differentiated must do the same.
    """
    model, batch = tiny_problem(seed, tau=tau)
    with no_grad():
        teacher = softmax_lastdim(model.forward(batch).logits / model.tau)

    def f() -> Tensor:
        return model.loss(batch, teacher_soft=teacher)[0].total

    params = {n: p for n, p in model.named_parameters()
              if not (freeze_students and n.startswith("student_"))}
    return finite_difference_report(f, params, eps, max_coords)
