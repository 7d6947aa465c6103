"""Self-checks behind the ``gradcheck`` and ``inflate-check`` commands."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import core
from .inflation import boring_video_equivalence, inflate_2d_to_3d

GRAD_TOLERANCE = 1e-4
BORING_TOLERANCE = 1e-5
TEMPORAL_SUM_TOLERANCE = 1e-6


def _away_from_zero(rng, shape):
    """Uniform magnitudes in [0.1, 2] with random signs, so relu kinks are never straddled."""
    return rng.uniform(0.1, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    """Well-separated values in random order, so max-pool windows have no near-ties."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.1).reshape(shape)


def _bn(training):
    def fn(x, g, b):
        c = x.shape[1]
        return core.batchnorm(x, g, b, np.zeros(c), np.ones(c), training)
    return fn


def _dropout(x):
    return core.dropout(x, 0.3, True, np.random.default_rng(7))


def _xent(logits):
    labels = np.arange(logits.shape[0]) % logits.shape[1]
    return core.softmax_cross_entropy(logits, labels)[0]


@dataclass(frozen=True)
class GradCase:
    op: str
    fn: Callable
    shapes: Tuple[tuple, ...]
    sampler: Callable = None


def gradient_cases() -> List[GradCase]:
    """At least three random shape configurations per differentiable op."""
    c = []
    for x, w, s, p in [((1, 1, 4, 4), (2, 1, 2, 2), 1, 0), ((2, 2, 5, 5), (3, 2, 3, 3), 2, 1),
                       ((1, 3, 4, 6), (2, 3, 3, 2), (1, 2), (1, 0))]:
        c.append(GradCase("conv2d", lambda a, b_, bias, s=s, p=p: core.conv2d(a, b_, bias, s, p),
                          (x, w, (w[0],))))
    for x, w, s, p in [((1, 1, 3, 4, 4), (1, 1, 2, 2, 2), 1, 0), ((1, 2, 3, 4, 4), (2, 2, 2, 3, 3), (1, 2, 1), 1),
                       ((2, 1, 4, 3, 5), (2, 1, 3, 1, 3), (2, 1, 2), (1, 0, 1))]:
        c.append(GradCase("conv3d", lambda a, b_, bias, s=s, p=p: core.conv3d(a, b_, bias, s, p),
                          (x, w, (w[0],))))
    for x, k, s in [((1, 1, 2, 4, 4), (1, 2, 2), (1, 2, 2)), ((1, 2, 2, 5, 5), (1, 3, 3), (1, 2, 2)),
                    ((2, 1, 4, 4, 4), (2, 2, 2), (2, 2, 2))]:
        c.append(GradCase("maxpool3d", lambda a, k=k, s=s: core.maxpool3d(a, k, s), (x,), _distinct))
    for x in [(1, 1, 2, 2, 2), (2, 3, 2, 3, 1), (1, 2, 1, 2, 3)]:
        c.append(GradCase("global_avgpool3d", lambda a: core.global_avgpool3d(a, a.shape[2:]), (x,)))
    for x in [(4, 3), (3, 2, 2, 2), (2, 2, 2, 2, 2)]:
        ch = (x[1],)
        c.append(GradCase("batchnorm[train]", _bn(True), (x, ch, ch)))
        c.append(GradCase("batchnorm[eval]", _bn(False), (x, ch, ch)))
    for x in [(5,), (3, 4), (2, 2, 3)]:
        c.append(GradCase("relu", core.relu, (x,), _away_from_zero))
    for b, i, o in [(3, 4, 2), (1, 5, 5), (4, 2, 3)]:
        c.append(GradCase("linear", core.linear, ((b, i), (o, i), (o,))))
    for x in [(6,), (3, 4), (2, 3, 2)]:
        c.append(GradCase("dropout", _dropout, (x,)))
    for shapes, axis in [(((2,), (3,), (4,)), 0), (((2, 3), (2, 1)), 1), (((1, 2, 2), (3, 2, 2)), 0)]:
        c.append(GradCase("concat", lambda *parts, axis=axis: core.concat(parts, axis), shapes))
    for x in [(4,), (2, 3), (2, 2, 2)]:
        c.append(GradCase("hadamard", core.hadamard, (x, x)))
    for x in [(4, 5), (1, 3), (3, 2)]:
        c.append(GradCase("softmax_cross_entropy", _xent, (x,)))
    for x in [(3, 4), (2, 3, 2), (5,)]:
        c.append(GradCase("add", core.add, (x, x)))
    for x in [(3, 4), (2, 6), (4, 3)]:
        # offset keeps the two operands at least 0.05 apart
        c.append(GradCase("maximum", lambda a, b: core.maximum(a, b + 0.05), (x, x), _distinct))
    for x, idx in [((2, 4, 3), [0, 2, 3]), ((1, 5, 2), [1, 4]), ((3, 3, 1), [0, 1, 2])]:
        c.append(GradCase("take", lambda a, idx=idx: core.take(a, idx, 1), (x,)))
    for x, perm in [((2, 3), (1, 0)), ((2, 3, 4), (0, 2, 1)), ((1, 2, 3, 2), (3, 1, 0, 2))]:
        c.append(GradCase("transpose", lambda a, perm=perm: core.transpose(a, perm), (x,)))
    for x in [(2, 3), (2, 2, 3), (4,)]:
        c.append(GradCase("mean", lambda a: core.mean(a, axis=-1), (x,)))
    for x in [(1, 1, 2, 3), (2, 3, 3, 3), (2, 2, 4, 2)]:
        coords = np.random.default_rng(x[2] * x[3]).standard_normal((x[2] * x[3], 3))
        c.append(GradCase("spatial_expectation", lambda a, k=coords: core.spatial_expectation(a, k), (x,)))
    return c


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.value < self.tolerance


def run_gradient_suite(cases: Sequence[GradCase] = None, seed: int = 0) -> List[CheckResult]:
    """Worst relative error per op over all of its shape configurations."""
    worst: Dict[str, float] = {}
    for i, case in enumerate(cases if cases is not None else gradient_cases()):
        err = core.grad_check(case.fn, case.shapes, seed=seed + i, sampler=case.sampler)
        worst[case.op] = max(worst.get(case.op, 0.0), err)
    return [CheckResult(op, err, GRAD_TOLERANCE) for op, err in worst.items()]


def run_inflation_suite(pairs: int = 10, seed: int = 0) -> List[CheckResult]:
    """Boring-video deviation (float32) and temporal-sum error over random frames/kernels."""
    rng = np.random.default_rng(seed)
    boring, tsum = 0.0, 0.0
    for _ in range(pairs):
        c, f = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        h, w = int(rng.integers(6, 17)), int(rng.integers(6, 17))
        k = int(rng.choice([1, 3, 5]))
        n_t = int(rng.integers(1, 6))
        stride = int(rng.integers(1, 3))
        frame = rng.standard_normal((c, h, w)).astype(np.float32)
        w2d = rng.standard_normal((f, c, k, k)).astype(np.float32)
        bias = rng.standard_normal(f).astype(np.float32)
        boring = max(boring, boring_video_equivalence(frame, w2d, bias, n_t, stride, k // 2))
        summed = inflate_2d_to_3d(w2d, n_t).astype(np.float64).sum(axis=2)
        tsum = max(tsum, float(np.max(np.abs(summed - w2d)) / np.max(np.abs(w2d))))
    return [
        CheckResult("boring_video_deviation", boring, BORING_TOLERANCE),
        CheckResult("temporal_sum_relative_error", tsum, TEMPORAL_SUM_TOLERANCE),
    ]


def format_table(results: Sequence[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max error':>12}  {'tolerance':>10}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.value:12.3e}  {r.tolerance:10.1e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


__all__ = ["CheckResult", "GradCase", "format_table", "gradient_cases", "run_gradient_suite",
           "run_inflation_suite"]
