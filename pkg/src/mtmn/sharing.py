"""Cross-category sharing: factored interaction tensors and task mixing."""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

TENSOR_MODES = ("factored", "independent", "single-shared")
# tensor families: G^a, G^p, D^a, D^p
FAMILIES = ("G_a", "G_p", "D_a", "D_p")


@dataclass(frozen=True)
class SharingConfig:
    """Which multi-task components are active.

    The reductions compared in the ablation study map to:

    ========  ==================  ===============  =========
    row       tensor_sharing      feature_sharing  auxiliary
    ========  ==================  ===============  =========
    C1+C2+C3  factored            True             True
    C1+C3     factored            False            True
    C2+C3     independent         True             True
    C2+C3*    single-shared       True             True
    C1+C2     factored            True             False
    C3        independent         False            True
    ========  ==================  ===============  =========
    """

    tensor_sharing: str = "factored"
    feature_sharing: bool = True
    auxiliary_task: bool = True

    def __post_init__(self):
        if self.tensor_sharing not in TENSOR_MODES:
            raise ValueError(f"tensor_sharing must be one of {TENSOR_MODES}")

    @classmethod
    def from_label(cls, label: str) -> "SharingConfig":
        try:
            return ABLATIONS[label]
        except KeyError:
            raise ValueError(f"unknown ablation {label!r}; choose from {sorted(ABLATIONS)}") from None


ABLATIONS = {
    "C1+C2+C3": SharingConfig("factored", True, True),
    "C1+C3": SharingConfig("factored", False, True),
    "C2+C3": SharingConfig("independent", True, True),
    "C2+C3*": SharingConfig("single-shared", True, True),
    "C1+C2": SharingConfig("factored", True, False),
    "C3": SharingConfig("independent", False, True),
}


def materialize_tensor(Z_k: Tensor, basis_k: Tensor, c: int) -> Tensor:
    """Category ``c``'s k-th interaction matrix: sum_i Z_k[c, i] * basis_k[i]."""
    if Z_k.ndim != 2 or basis_k.ndim != 3 or Z_k.shape[1] != basis_k.shape[0]:
        raise DimensionError(f"factor shapes {Z_k.shape} and {basis_k.shape} are inconsistent")
    if not 0 <= c < Z_k.shape[0]:
        raise IndexError(f"category {c} out of range 0..{Z_k.shape[0] - 1}")
    return ad.einsum("i,iab->ab", Z_k[c], basis_k)


def materialize_all(Z: Tensor, basis: Tensor) -> Tensor:
    """Every category's tensor at once.

    ``Z`` is (K, C, m) and ``basis`` is (K, m, d, d); the result is
    (C, K, d, d).
    """
    if Z.ndim != 3 or basis.ndim != 4 or Z.shape[0] != basis.shape[0] or Z.shape[2] != basis.shape[1]:
        raise DimensionError(f"factor shapes {Z.shape} and {basis.shape} are inconsistent")
    return ad.einsum("kci,kiab->ckab", Z, basis)


def task_similarity(U: Tensor) -> Tensor:
    """C x C similarity from prototypes ``U`` given as rows (C x d).

    ``S[c, :]`` is a softmax over the inner products of task c with every
    task, so the weights that blend into task c sum to one.
    """
    M = ad.einsum("ci,ei->ce", U, U)
    return ad.softmax(M, axis=1)


def refine_token_features(S: Tensor, R: Tensor) -> Tensor:
    """Blend token features across tasks: out[c] = sum_c' S[c, c'] R[c'].

    ``R`` is (C, 2K, n).
    """
    if S.ndim != 2 or S.shape[1] != R.shape[0]:
        raise DimensionError(f"similarity {S.shape} does not match features {R.shape}")
    return ad.einsum("ce,ekn->ckn", S, R)


def refine_sentence_features(S: Tensor, O: Tensor) -> Tensor:
    """Same blend for the (C, d) sentence summaries."""
    if S.ndim != 2 or S.shape[1] != O.shape[0]:
        raise DimensionError(f"similarity {S.shape} does not match summaries {O.shape}")
    return ad.einsum("ce,ei->ci", S, O)
