"""
Dense float64 tensor arithmetic on top of torch autograd

torch tensors are the array type throughout the library. Reverse-mode
differentiation is torch's autograd tape: every differentiable result carries
a ``grad_fn`` node holding the saved intermediates of its backward rule, and
``backward`` visits each node once in reverse topological order. This module
adds the validated primitives the attention code is written against, a
central-difference gradient checker, and the seeded random source.
"""

from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .exceptions import DegenerateError, ShapeError, ValidationError

DTYPE = torch.float64

Number = Union[int, float]


def as_tensor(data, requires_grad: bool = False) -> torch.Tensor:
    """Build a float64 tensor (copying), rejecting non-finite entries."""
    if isinstance(data, torch.Tensor):
        tensor = data.detach().to(DTYPE).clone()
    else:
        tensor = torch.from_numpy(np.array(data, dtype=np.float64))
    if tensor.numel() == 0:
        raise ShapeError("Tensor must have positive extents", shapes=[tuple(tensor.shape)], operation="as_tensor")
    assert_finite(tensor, "as_tensor")
    return tensor.requires_grad_(requires_grad)


def zeros(*shape: int) -> torch.Tensor:
    return torch.zeros(*shape, dtype=DTYPE)


def eye(n: int) -> torch.Tensor:
    return torch.eye(n, dtype=DTYPE)


def assert_finite(tensor: torch.Tensor, operation: str) -> torch.Tensor:
    """Reject NaN/Inf after an operation commits."""
    if not bool(torch.isfinite(tensor).all()):
        raise ValidationError(f"Non-finite values produced by {operation}", field=operation)
    return tensor


def _require_matrix(x: torch.Tensor, name: str, operation: str) -> None:
    if x.dim() != 2:
        raise ShapeError(
            f"{operation} expects a 2-D tensor for {name}, got shape {tuple(x.shape)}",
            shapes=[tuple(x.shape)],
            operation=operation,
        )


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """c[i][j] = sum_p a[i][p] * b[p][j] for a (m x k) and b (k x n)."""
    _require_matrix(a, "a", "matmul")
    _require_matrix(b, "b", "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {tuple(a.shape)} x {tuple(b.shape)}",
            shapes=[tuple(a.shape), tuple(b.shape)],
            operation="matmul",
        )
    return a @ b


def softmax_rows(x: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
    """Row-wise softmax of ``x / scale`` (max-subtracted, so large logits are safe)."""
    _require_matrix(x, "x", "softmax_rows")
    if x.shape[1] < 1:
        raise ShapeError("softmax_rows needs at least one column", shapes=[tuple(x.shape)], operation="softmax_rows")
    if scale <= 0:
        raise ValidationError("softmax scale must be positive", field="scale", value=scale)
    z = x / scale if scale != 1.0 else x
    z = z - z.max(dim=1, keepdim=True).values.detach()
    e = torch.exp(z)
    return e / e.sum(dim=1, keepdim=True)


def row_norms(x: torch.Tensor) -> torch.Tensor:
    """Euclidean norm of each row, shape (m, 1)."""
    _require_matrix(x, "x", "row_norms")
    return torch.linalg.vector_norm(x, dim=1, keepdim=True)


def l2_norm(v: torch.Tensor) -> float:
    _require_matrix(v, "v", "l2_norm")
    if v.shape[0] != 1:
        raise ShapeError("l2_norm expects a row vector (1 x d)", shapes=[tuple(v.shape)], operation="l2_norm")
    return float(torch.linalg.vector_norm(v.detach()))


def scale_to_norm(v: torch.Tensor, target: Number) -> torch.Tensor:
    """Rescale a row vector to norm ``target``, keeping its direction."""
    if target < 0:
        raise ValidationError("target norm must be non-negative", field="target", value=target)
    _require_matrix(v, "v", "scale_to_norm")
    norm = torch.linalg.vector_norm(v)
    if float(norm) == 0.0:
        if target > 0:
            raise DegenerateError("Cannot rescale a zero vector to a positive norm")
        return v.clone()
    if float(norm) == float(target):
        return v.clone()
    return v * (target / norm)


def rescale_rows(x: torch.Tensor, target: Union[Number, torch.Tensor], layer_id: Optional[int] = None) -> torch.Tensor:
    """Rescale every row of ``x`` to norm ``target`` (differentiable in both)."""
    norms = row_norms(x)
    zero_rows = (norms.squeeze(1) == 0).nonzero()
    if zero_rows.numel() > 0:
        row = int(zero_rows[0, 0])
        raise DegenerateError(
            f"Row {row} has zero norm and cannot be rescaled",
            layer_id=layer_id,
            row=row,
        )
    return x * (target / norms)


def patchify(image: torch.Tensor, patch: int) -> torch.Tensor:
    """(H, W, C) image -> (H/p * W/p, p*p*C) row-major patch matrix"""
    if image.dim() != 3:
        raise ShapeError("patchify expects an (H, W, C) image", shapes=[tuple(image.shape)], operation="patchify")
    height, width, channels = image.shape
    if height % patch or width % patch:
        raise ShapeError(
            f"image {height}x{width} is not divisible by patch size {patch}",
            shapes=[tuple(image.shape)],
            operation="patchify",
        )
    gh, gw = height // patch, width // patch
    return (image.reshape(gh, patch, gw, patch, channels)
            .permute(0, 2, 1, 3, 4)
            .reshape(gh * gw, patch * patch * channels))


def unpatchify(patches: torch.Tensor, patch: int, height: int, width: int, channels: int) -> torch.Tensor:
    """Inverse of ``patchify``"""
    gh, gw = height // patch, width // patch
    if patches.shape != (gh * gw, patch * patch * channels):
        raise ShapeError(
            f"patch matrix {tuple(patches.shape)} does not tile a {height}x{width}x{channels} image",
            shapes=[tuple(patches.shape)],
            operation="unpatchify",
        )
    return (patches.reshape(gh, gw, patch, patch, channels)
            .permute(0, 2, 1, 3, 4)
            .reshape(height, width, channels))


def grad_check(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, eps: float = 1e-6) -> float:
    """
    Compare autograd against central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
    ``f`` must be pure and return a scalar tensor.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValidationError("eps must lie in [1e-7, 1e-3]", field="eps", value=eps)

    point = x.detach().clone().to(DTYPE).requires_grad_(True)
    value = f(point)
    if value.numel() != 1:
        raise ShapeError("grad_check needs a scalar-valued function", shapes=[tuple(value.shape)], operation="grad_check")
    if not bool(torch.isfinite(value).all()):
        raise ValidationError("f(x) is not finite", field="f")

    if value.requires_grad:
        (analytic,) = torch.autograd.grad(value.reshape(()), point, allow_unused=True)
        if analytic is None:
            analytic = torch.zeros_like(point)
    else:
        analytic = torch.zeros_like(point)
    analytic = analytic.detach().reshape(-1)

    base = x.detach().clone().to(DTYPE)
    flat = base.reshape(-1)
    numeric = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = float(flat[i])
            flat[i] = original + eps
            plus = float(f(base))
            flat[i] = original - eps
            minus = float(f(base))
            flat[i] = original
            numeric[i] = (plus - minus) / (2.0 * eps)

    denom = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=1.0)
    return float(((analytic - numeric).abs() / denom).max())


class RandomSource:
    """
    Seeded, splittable random stream.

    Algorithm: numpy ``PCG64`` seeded from ``SeedSequence(seed, spawn_key=stream)``.
    Both are specified bit-for-bit by numpy, so identical (seed, stream, draw
    sequence) give identical outputs on every platform. Draws are returned as
    float64 torch tensors.
    """

    def __init__(self, seed: int, stream: Sequence[int] = ()):
        if not 0 <= int(seed) < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer", field="seed", value=seed)
        self.seed = int(seed)
        self.stream: Tuple[int, ...] = tuple(int(s) for s in stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def child(self, stream_id: int) -> "RandomSource":
        """Independent stream derived from this one's (seed, stream) lineage."""
        return RandomSource(self.seed, self.stream + (int(stream_id),))

    @property
    def numpy(self) -> np.random.Generator:
        return self._generator

    def normal(self, *shape: int, std: float = 1.0) -> torch.Tensor:
        return torch.from_numpy(self._generator.standard_normal(shape) * std).to(DTYPE)

    def uniform(self, *shape: int, low: float = 0.0, high: float = 1.0) -> torch.Tensor:
        return torch.from_numpy(self._generator.uniform(low, high, size=shape)).to(DTYPE)

    def integers(self, low: int, high: int, size: Optional[int] = None):
        return self._generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, stream={self.stream})"
