"""
Finite-difference gradient checking.

``check_gradients`` compares backprop against central differences on a
random sample of coordinates of every tensor handed to it.  ``run_suite``
applies it to each building block on small random inputs (batch 2).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attention import AttentionModule
from .backbone import BackboneConfig, build_backbone
from .constants import (
    DESK_INPUT_SIZE,
    FEATURE_CHANNELS,
    GRADCHECK_FLOOR,
    GRADCHECK_SAMPLES,
    GRADCHECK_STEP,
    GRADCHECK_TOLERANCE,
)
from .ktm import KnowledgeTransfer
from .layers import Module
from .network import GeleNet, ModelSpec
from .predictor import SaliencyPredictor, hybrid_loss
from .tensor import (
    Tensor,
    backward,
    bilinear_upsample,
    channel_max,
    channel_mean,
    clamp,
    concat_channels,
    conv2d,
    current_tape,
    log,
    matmul,
    mul,
    no_grad,
    permute_channels,
    reduce_sum,
    relu,
    sigmoid,
    softmax_rows,
    split_channels,
    sqrt,
    transpose2d,
)

logger = logging.getLogger(__name__)

LossFn = Callable[[], Tensor]


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class TensorCheck:
    name: str
    samples: int
    max_rel_error: float


@dataclass
class CheckResult:
    module: str
    tolerance: float
    tensors: List[TensorCheck] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    @property
    def worst(self) -> str:
        if not self.tensors:
            return ""
        return max(self.tensors, key=lambda t: t.max_rel_error).name

    @property
    def samples(self) -> int:
        return sum(t.samples for t in self.tensors)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "module": self.module,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "worst": self.worst,
            "samples": self.samples,
            "seconds": round(self.seconds, 3),
        }


def relative_error(analytic: float, numeric: float, floor: float = GRADCHECK_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


# ---------------------------------------------------------------------------
# Core check
# ---------------------------------------------------------------------------

def check_gradients(
    loss_fn: LossFn,
    tensors: Dict[str, Tensor],
    rng: np.random.Generator,
    module: str = "",
    samples: int = GRADCHECK_SAMPLES,
    step: float = GRADCHECK_STEP,
    tolerance: float = GRADCHECK_TOLERANCE,
) -> CheckResult:
    """Backprop once, then probe up to *samples* coordinates of each tensor.

    *loss_fn* must rebuild the graph from the current tensor values and
    return a scalar.
    """
    started = time.perf_counter()
    current_tape().clear()
    for t in tensors.values():
        t.requires_grad = True
        t.grad = None
    backward(loss_fn())
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors.items()}

    result = CheckResult(module=module, tolerance=tolerance)
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        worst = 0.0
        for idx in picks:
            original = flat[idx]
            with no_grad():
                flat[idx] = original + step
                plus = loss_fn().item()
                flat[idx] = original - step
                minus = loss_fn().item()
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * step)
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[idx]), numeric))
        result.tensors.append(TensorCheck(name=name, samples=len(picks), max_rel_error=worst))

    for t in tensors.values():
        t.grad = None
    result.seconds = time.perf_counter() - started
    logger.debug("gradcheck %s: max rel err %.3e (%s)", module, result.max_rel_error, result.worst)
    return result


def projection(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    return rng.standard_normal(tuple(shape))


def projected(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum(out * weights)."""
    return reduce_sum(mul(out, weights))


def module_tensors(module: Module, **inputs: Tensor) -> Dict[str, Tensor]:
    tensors = {f"input:{k}": v for k, v in inputs.items()}
    tensors.update({p.name: p.value for p in module.parameters() if p.trainable})
    return tensors


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------

def _randn(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale)


def _op_cases(rng: np.random.Generator) -> List[Tuple[str, LossFn, Dict[str, Tensor]]]:
    cases = []

    x = _randn(rng, 2, 3, 6, 6)
    w = _randn(rng, 4, 3, 3, 3)
    b = _randn(rng, 4)
    r = projection(rng, (2, 4, 3, 3))
    cases.append(("op:conv2d", lambda: projected(conv2d(x, w, b, stride=2, padding=1), r),
                  {"x": x, "weight": w, "bias": b}))

    a = _randn(rng, 2, 4, 5)
    m = _randn(rng, 2, 5, 3)
    r2 = projection(rng, (2, 4, 3))
    cases.append(("op:matmul", lambda: projected(matmul(a, m), r2), {"a": a, "b": m}))

    s = _randn(rng, 2, 5, 5)
    r3 = projection(rng, (2, 5, 5))
    cases.append(("op:softmax_rows", lambda: projected(softmax_rows(s), r3), {"x": s}))

    u = _randn(rng, 2, 2, 3, 3)
    r4 = projection(rng, (2, 2, 12, 12))
    cases.append(("op:bilinear_upsample", lambda: projected(bilinear_upsample(u, 4), r4), {"x": u}))

    c = _randn(rng, 2, 8, 4, 4)
    r5 = projection(rng, (2, 2, 4, 4))
    cases.append(("op:channel_pool",
                  lambda: projected(concat_channels([channel_max(c), channel_mean(c)]), r5), {"x": c}))

    perm = rng.permutation(8)
    r6 = projection(rng, (2, 2, 4, 4))
    cases.append(("op:permute_split",
                  lambda: projected(sigmoid(split_channels(permute_channels(c, perm), 4)[1]), r6), {"x": c}))

    p = Tensor(rng.uniform(0.2, 0.9, size=(2, 3, 4)))
    r7 = projection(rng, (2, 4, 3))
    cases.append(("op:pointwise",
                  lambda: projected(transpose2d(log(p) + sqrt(p) / clamp(p, 0.1, 0.95) + relu(p - 0.5)), r7),
                  {"x": p}))
    return cases


def run_suite(
    tolerance: float = GRADCHECK_TOLERANCE,
    samples: int = GRADCHECK_SAMPLES,
    seed: int = 0,
    full_model: bool = False,
    stub_channels: Sequence[int] = (16, 32, 48, 64),
    progress: Optional[Callable[[CheckResult], None]] = None,
) -> List[CheckResult]:
    """Check ops, backbone, D-SWSAM, SWSAM, KTM, predictor and loss on small shapes."""
    rng = np.random.default_rng(seed)
    results: List[CheckResult] = []
    c = FEATURE_CHANNELS

    def run(name: str, loss_fn: LossFn, tensors: Dict[str, Tensor]) -> None:
        result = check_gradients(loss_fn, tensors, rng, name, samples, tolerance=tolerance)
        results.append(result)
        if progress is not None:
            progress(result)

    for name, loss_fn, tensors in _op_cases(rng):
        run(name, loss_fn, tensors)

    # backbone stub + pyramid normalisation
    cfg = BackboneConfig(input_size=DESK_INPUT_SIZE, stub_channels=tuple(stub_channels))
    extractor, normalizer = build_backbone(cfg, rng)
    image = Tensor(rng.uniform(0.0, 1.0, size=(2, 3, cfg.input_size, cfg.input_size)))
    with no_grad():
        shapes = normalizer(extractor(image)).shapes()
    weights = [projection(rng, s) for s in shapes]

    def backbone_loss() -> Tensor:
        pyr = normalizer(extractor(image))
        total = projected(pyr.f1, weights[0])
        for feat, wt in zip((pyr.f2, pyr.f3, pyr.f4), weights[1:]):
            total = total + projected(feat, wt)
        return total

    tensors = module_tensors(extractor, image=image)
    tensors.update(module_tensors(normalizer))
    run("backbone", backbone_loss, tensors)

    # attention modules
    for name, directional, size, mode in (
        ("dswsam", True, 16, "full"),
        ("swsam", False, 8, "full"),
        ("swsam:plain_sa", False, 8, "plain_sa"),
        ("swsam:sge", False, 8, "sge"),
    ):
        module = AttentionModule(name, rng, directional=directional, mode=mode)
        if module.sge is not None:
            module.sge.weight.value.data[...] = rng.uniform(0.5, 1.5, size=module.sge.weight.shape)
        f = _randn(rng, 2, c, size, size)
        r = projection(rng, (2, c, size, size))
        run(name, lambda m=module, f=f, r=r: projected(m(f), r), module_tensors(module, f=f))

    # knowledge transfer; non-zero residual scalars so the attention path carries gradient
    ktm = KnowledgeTransfer("ktm", rng)
    ktm.gamma2.value.data[...] = 0.7
    ktm.gamma3.value.data[...] = -0.4
    f2, f3 = _randn(rng, 2, c, 4, 4, scale=0.5), _randn(rng, 2, c, 4, 4, scale=0.5)
    r = projection(rng, (2, c, 4, 4))
    run("ktm", lambda: projected(ktm(f2, f3), r), module_tensors(ktm, f2=f2, f3=f3))

    # predictor on a 32-pixel pyramid
    predictor = SaliencyPredictor("predictor", rng)
    low, mid, high = _randn(rng, 2, c, 8, 8), _randn(rng, 2, c, 2, 2), _randn(rng, 2, c, 1, 1)
    r = projection(rng, (2, 1, 8, 8))
    run("predictor", lambda: projected(predictor.decode(low, mid, high), r),
        module_tensors(predictor, f_dswsa=low, f_ktm=mid, f_swsa=high))

    # hybrid loss with respect to the prediction itself
    pred = Tensor(rng.uniform(0.05, 0.95, size=(2, 1, 16, 16)))
    gt = (rng.uniform(size=(2, 1, 16, 16)) > 0.6).astype(np.float64)
    run("loss", lambda: hybrid_loss(pred, gt), {"input:S": pred})

    if full_model:
        model = GeleNet(ModelSpec(backbone=BackboneConfig(DESK_INPUT_SIZE, tuple(stub_channels))), seed=seed)
        for p in (model.ktm.gamma2, model.ktm.gamma3):
            p.value.data[...] = rng.uniform(0.3, 0.8)
        image = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, 64, 64)))
        gt = (rng.uniform(size=(1, 1, 64, 64)) > 0.7).astype(np.float64)
        run("gelenet", lambda: hybrid_loss(model(image), gt),
            {p.name: p.value for p in model.trainable()})

    return results


def all_passed(results: Sequence[CheckResult]) -> bool:
    return all(r.passed for r in results)
