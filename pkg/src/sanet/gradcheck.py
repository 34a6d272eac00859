"""Central finite-difference verification of the reverse-mode gradients.

Each check builds a scalar probe ``loss = sum(output * projection)`` with
a fixed random projection, computes analytic leaf gradients with one
backward pass, then re-derives every leaf coordinate's gradient from two
forward evaluations at ``x +- h``.  Checks run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import (
    PAIRWISE_RELATIONS,
    PATCHWISE_RELATIONS,
    POSITION_MODES,
    AttentionConfig,
    Conv2d,
    VectorAttention,
)
from .tensor import Tensor, no_grad

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
CHECK_SHAPE = (1, 16, 5, 5)
CHECK_FOOTPRINT = 3


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    tol: float
    per_leaf: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_rel_error": self.max_rel_error,
            "tol": self.tol,
            "passed": self.passed,
            "per_leaf": self.per_leaf,
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative disagreement between two gradient estimates."""
    num = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    den = max(float(np.max(np.abs(analytic), initial=0.0)),
              float(np.max(np.abs(numeric), initial=0.0)), 1e-12)
    return num / den


def check_gradients(build, leaves: dict[str, Tensor], name: str = "case",
                    h: float = DEFAULT_STEP, tol: float = DEFAULT_TOL,
                    seed: int = 0) -> CaseResult:
    """Compare backward() gradients of ``build()`` against finite differences.

    ``build`` must return the operator output as a function of the current
    contents of ``leaves`` (the same Tensor objects are perturbed in place
    for the numeric estimate).
    """
    rng = np.random.default_rng(seed)
    out = build()
    proj = rng.uniform(-1.0, 1.0, out.shape)

    for leaf in leaves.values():
        leaf.grad = None
    loss = T.sum(T.mul(build(), Tensor(proj)))
    loss.backward()
    analytic = {
        lname: (leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data))
        for lname, leaf in leaves.items()
    }

    def probe() -> float:
        with no_grad():
            return float((build().data * proj).sum())

    result = CaseResult(name=name, max_rel_error=0.0, tol=tol)
    for lname, leaf in leaves.items():
        flat = leaf.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = probe()
            flat[i] = orig - h
            f_minus = probe()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        err = relative_error(analytic[lname].reshape(-1), numeric)
        result.per_leaf[lname] = err
        result.max_rel_error = max(result.max_rel_error, err)
    return result


# ---------------------------------------------------------------------------
# operator sweep
# ---------------------------------------------------------------------------


def _check_config(family: str, relation: str, position: str = "none",
                  normalize: bool = False) -> AttentionConfig:
    # channels=16 at the check shape: r1=4 -> width 4, r2=2 -> value width 8
    return AttentionConfig(
        family=family, relation=relation, footprint=CHECK_FOOTPRINT,
        r1=4, r2=2, share=2, position=position, normalize=normalize,
    )


def attention_case(family: str, relation: str, position: str = "none",
                   normalize: bool = False, seed: int = 7):
    cfg = _check_config(family, relation, position, normalize)
    rng = np.random.default_rng(seed)
    params = VectorAttention(CHECK_SHAPE[1], cfg, rng, dtype=np.float64)
    x = Tensor(rng.normal(0.0, 1.0, CHECK_SHAPE), requires_grad=True)
    leaves = {"x": x}
    leaves.update(dict(params.named_parameters()))
    tag = f"{family}/{relation}"
    if family == "pairwise":
        tag += f"/{position}"
    if family == "scalar":
        tag = f"scalar/{'softmax' if normalize else 'raw'}"
    return tag, (lambda: params.forward(x)), leaves


def conv_case(seed: int = 7):
    rng = np.random.default_rng(seed)
    conv = Conv2d(CHECK_SHAPE[1], 8, CHECK_FOOTPRINT, bias=True, rng=rng, dtype=np.float64)
    x = Tensor(rng.normal(0.0, 1.0, CHECK_SHAPE), requires_grad=True)
    leaves = {"x": x}
    leaves.update(dict(conv.named_parameters()))
    return "conv/3x3", (lambda: conv.forward(x)), leaves


def block_cases(seed: int = 7):
    from .blocks import Bottleneck, SelfAttentionBlock

    rng = np.random.default_rng(seed)
    cfg = _check_config("pairwise", "subtraction", position="relative")
    sab = SelfAttentionBlock(CHECK_SHAPE[1], cfg, rng, dtype=np.float64)
    # zero-initialized expansion would mask the attention path in the check
    sab.expand.w.data[...] = rng.normal(0.0, 0.2, sab.expand.w.shape)
    x1 = Tensor(rng.normal(0.0, 1.0, CHECK_SHAPE), requires_grad=True)
    leaves1 = {"x": x1}
    leaves1.update(dict(sab.named_parameters()))

    bott = Bottleneck(CHECK_SHAPE[1], 4, rng=rng, dtype=np.float64)
    bott.conv3.kernel.data[...] = rng.normal(0.0, 0.2, bott.conv3.kernel.shape)
    x2 = Tensor(rng.normal(0.0, 1.0, CHECK_SHAPE), requires_grad=True)
    leaves2 = {"x": x2}
    leaves2.update(dict(bott.named_parameters()))

    return [
        ("block/self-attention", (lambda: sab.forward(x1)), leaves1),
        ("block/bottleneck", (lambda: bott.forward(x2)), leaves2),
    ]


def sweep_cases(kind: str | None = None, relation: str | None = None,
                position: str | None = None, seed: int = 7):
    """Every operator/relation/position combination, optionally filtered."""
    cases = []
    if kind in (None, "pairwise"):
        for rel in PAIRWISE_RELATIONS:
            if relation is not None and rel != relation:
                continue
            for pos in POSITION_MODES:
                if position is not None and pos != position:
                    continue
                cases.append(attention_case("pairwise", rel, position=pos, seed=seed))
    if kind in (None, "patchwise"):
        for rel in PATCHWISE_RELATIONS:
            if relation is not None and rel != relation:
                continue
            cases.append(attention_case("patchwise", rel, seed=seed))
    if kind in (None, "scalar") and relation is None:
        cases.append(attention_case("scalar", "dot", normalize=False, seed=seed))
        cases.append(attention_case("scalar", "dot", normalize=True, seed=seed))
    if kind in (None, "conv") and relation is None:
        cases.append(conv_case(seed=seed))
    if kind in (None, "block") and relation is None:
        cases.extend(block_cases(seed=seed))
    return cases


def run_sweep(kind: str | None = None, relation: str | None = None,
              position: str | None = None, tol: float = DEFAULT_TOL,
              h: float = DEFAULT_STEP, seed: int = 7) -> list[CaseResult]:
    results = []
    for name, build, leaves in sweep_cases(kind, relation, position, seed=seed):
        results.append(check_gradients(build, leaves, name=name, h=h, tol=tol, seed=seed))
    return results
