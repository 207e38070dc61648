"""Training objective: reconstruction, fidelity and Gram-correlation terms,
the invariance-layer contraction penalty, and per-term gradient routing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import tensor as T
from .errors import ShapeError
from .network import EMBEDDER_PREFIXES, ForwardResult
from .tensor import Tensor


@dataclass
class LossBreakdown:
    extraction: Tensor
    fidelity: Tensor
    correlation: Tensor
    penalty: Tensor | None = None
    lam: float = 0.0

    @property
    def empirical(self) -> Tensor:
        return self.extraction + self.fidelity + self.correlation

    @property
    def total(self) -> Tensor:
        if self.penalty is None:
            return self.empirical
        return structural_risk(self.empirical, self.penalty, self.lam)

    def values(self) -> dict[str, float]:
        out = {
            "term_extraction": self.extraction.item(),
            "term_fidelity": self.fidelity.item(),
            "term_correlation": self.correlation.item(),
            "penalty": self.penalty.item() if self.penalty is not None else 0.0,
        }
        out["total"] = self.total.item()
        return out


def _mean_abs_per_sample(a: Tensor, b: Tensor) -> Tensor:
    # Equal-sized samples: the mean over all elements equals the batch mean of
    # per-sample means.
    return T.mean_abs_diff(a, b)


def psi(loss_feats) -> Tensor:
    """Gram-matrix distance between the feature-image and marked-image features.

    ``loss_feats`` is ``(f1(wf), f1(m), f2(wf), f2(m))``.
    """
    f1_wf, f1_m, f2_wf, f2_m = loss_feats
    d1 = T.mean_abs_diff(T.gram(f1_wf), T.gram(f1_m))
    d2 = T.mean_abs_diff(T.gram(f2_wf), T.gram(f2_m))
    return (d1 + d2) * 0.5


def invariance_penalty(omega: Tensor, h: Tensor) -> Tensor:
    """Closed-form squared Frobenius norm of the tanh layer's Jacobian.

    For ``h = tanh(x @ omega + b)`` the per-pixel value is
    ``sum_j (1 - h_j^2)^2 * sum_i omega[i, j]^2``; the result is averaged over
    pixels and batch.
    """
    if h.shape[-1] != omega.shape[1]:
        raise ShapeError(f"penalty: h has {h.shape[-1]} units, omega is {omega.shape}")
    col_norms = T.tsum(T.square(omega), axis=0)
    slope = T.square(1.0 - T.square(h))
    per_pixel = T.tsum(slope * col_norms, axis=-1)
    return T.tmean(per_pixel)


def empirical_risk(out: ForwardResult, w: Tensor, c: Tensor) -> LossBreakdown:
    batch = w.shape[0] if w.ndim == 4 else 1
    if batch == 0:
        raise ShapeError("empirical risk needs at least one example (B = 0)")
    return LossBreakdown(
        extraction=_mean_abs_per_sample(out.w_hat, w),
        fidelity=_mean_abs_per_sample(out.m, c),
        correlation=psi(out.loss_feats),
    )


def structural_risk(empirical: Tensor, penalty: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return empirical
    return empirical + penalty * lam


def compute_loss(out: ForwardResult, w: Tensor, c: Tensor, params: Mapping[str, Tensor],
                 lam: float) -> LossBreakdown:
    br = empirical_risk(out, w, c)
    br.penalty = invariance_penalty(params["tau.w"], out.h)
    br.lam = lam
    return br


def route_gradients(br: LossBreakdown, params: Mapping[str, Tensor], routed: bool = True) -> None:
    """Backpropagate the structural risk with the embedder-only policy.

    The extraction term and the penalty reach every parameter; the fidelity
    and correlation terms only update the embedder (``mu.*``, ``sigma.*``).
    When the embedder-only terms cannot reach any other parameter, a single
    backward pass over the full objective is equivalent and is used instead.
    """
    penalty = br.penalty if br.penalty is not None else None
    everywhere = br.extraction
    if penalty is not None and br.lam > 0:
        everywhere = everywhere + penalty * br.lam
    embedder_only = br.fidelity + br.correlation
    if not routed:
        T.backward(everywhere + embedder_only)
        return
    others = [p for k, p in params.items() if not k.startswith(EMBEDDER_PREFIXES)]
    if not T.reaches(embedder_only, others):
        T.backward(everywhere + embedder_only)
        return
    T.backward(everywhere)
    embed = [p for k, p in params.items() if k.startswith(EMBEDDER_PREFIXES)]
    T.backward(embedder_only, scope=embed)
