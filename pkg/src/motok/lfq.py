"""Look-up-free quantization onto the binary lattice {-1, +1}^d.

The codebook is implicit: each latent dimension quantizes independently to
the nearer of +1/-1, and the token index is the little-endian bit pattern of
the signs.  No code vectors are stored anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy


class QuantizerError(ValueError):
    """Raised for dimension mismatches or out-of-range indices."""


@dataclass(frozen=True)
class LfqCodebook:
    """Implicit binary codebook: ``vocab_size`` = 2 ** ``num_dims``."""

    num_dims: int

    def __post_init__(self):
        if not 1 <= int(self.num_dims) <= 62:
            raise QuantizerError(f"num_dims must be in [1, 62], got {self.num_dims}")
        object.__setattr__(self, "num_dims", int(self.num_dims))

    @property
    def vocab_size(self) -> int:
        return 1 << self.num_dims

    @classmethod
    def from_vocab_size(cls, vocab_size: int) -> "LfqCodebook":
        vocab_size = int(vocab_size)
        if vocab_size < 2 or vocab_size & (vocab_size - 1) != 0:
            raise QuantizerError(f"vocab_size must be a power of two >= 2, got {vocab_size}")
        return cls(num_dims=vocab_size.bit_length() - 1)


@dataclass(frozen=True)
class QuantizedCode:
    """Sign pattern over {-1, +1}^d with its integer token index."""

    bits: np.ndarray
    index: int

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int8).copy()
        if bits.ndim != 1 or not np.all(np.abs(bits) == 1):
            raise QuantizerError("bits must be a 1-D array over {-1, +1}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "index", int(self.index))


def sign_bits(latents: np.ndarray) -> np.ndarray:
    """Per-dimension binary quantization: +1 where the latent is > 0, else -1.

    The tie at exactly zero maps to -1 so the sign pattern always agrees with
    the strict indicator used by :func:`bits_to_indices`.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if not np.all(np.isfinite(latents)):
        raise QuantizerError("latents contain non-finite values")
    return np.where(latents > 0.0, 1, -1).astype(np.int8)


def bits_to_indices(bits: np.ndarray) -> np.ndarray:
    """Token indices from sign patterns: bit i (0-based) carries weight 2**i."""
    bits = np.asarray(bits)
    weights = 1 << np.arange(bits.shape[-1], dtype=np.int64)
    return ((bits > 0).astype(np.int64) * weights).sum(axis=-1)


def indices_to_bits(indices: np.ndarray, num_dims: int) -> np.ndarray:
    """Inverse of :func:`bits_to_indices`; bijective over [0, 2**num_dims)."""
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= (1 << num_dims)):
        raise QuantizerError(f"token index out of range for vocab 2**{num_dims}")
    shifts = np.arange(num_dims, dtype=np.int64)
    return np.where((indices[..., None] >> shifts) & 1, 1, -1).astype(np.int8)


def quantize(latent: np.ndarray, codebook: LfqCodebook) -> QuantizedCode:
    """Quantize one latent vector to its nearest binary code and token index."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (codebook.num_dims,):
        raise QuantizerError(
            f"latent has shape {latent.shape}, codebook expects ({codebook.num_dims},)"
        )
    bits = sign_bits(latent)
    return QuantizedCode(bits=bits, index=int(bits_to_indices(bits)))


def index_to_bits(index: int, codebook: LfqCodebook) -> QuantizedCode:
    """Expand a token index back into its sign pattern."""
    index = int(index)
    if not 0 <= index < codebook.vocab_size:
        raise QuantizerError(f"index {index} out of range [0, {codebook.vocab_size})")
    bits = indices_to_bits(np.int64(index), codebook.num_dims)
    return QuantizedCode(bits=bits, index=index)


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy of Bernoulli(p) in nats; 0*log(0) treated as 0."""
    return -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))


def entropy_loss(batch_logits: np.ndarray, temperature: float = 1.0) -> float:
    """Code-diversity regularizer over a batch of pre-quantization latents.

    Each latent row induces a factorized Bernoulli distribution over its sign
    pattern, p_i = sigmoid(2 * z_i / temperature).  The loss is the mean
    per-sample code entropy minus the entropy of the batch-mean code
    distribution (both in nats, summed over dimensions).  Driving it down
    makes individual codes confident while spreading usage across the batch;
    its lower bound is -num_dims * ln(2).
    """
    z = np.asarray(batch_logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise QuantizerError(f"batch_logits must be (N, d) with N >= 1, got {z.shape}")
    if not temperature > 0.0:
        raise QuantizerError(f"temperature must be > 0, got {temperature}")
    if not np.all(np.isfinite(z)):
        raise QuantizerError("batch_logits contain non-finite values")
    p = expit(2.0 * z / temperature)
    per_sample = _binary_entropy(p).sum(axis=1).mean()
    marginal = _binary_entropy(p.mean(axis=0)).sum()
    return float(per_sample - marginal)


def entropy_loss_grad(batch_logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Gradient of :func:`entropy_loss` with respect to the latents."""
    z = np.asarray(batch_logits, dtype=np.float64)
    if not temperature > 0.0:
        raise QuantizerError(f"temperature must be > 0, got {temperature}")
    n = z.shape[0]
    p = expit(2.0 * z / temperature)
    p_bar = np.clip(p.mean(axis=0), 1e-12, 1.0 - 1e-12)
    # dH(p)/dp = log((1-p)/p); for the per-sample term this is exactly the
    # negated logit, -2z/tau, which avoids log-of-zero at saturation.
    dterm1 = -2.0 * z / temperature
    dterm2 = np.log((1.0 - p_bar) / p_bar)
    return (dterm1 - dterm2) * (2.0 / temperature) * p * (1.0 - p) / n


def commitment_loss(latent: np.ndarray, code: QuantizedCode) -> float:
    """Squared L2 distance between a latent and its binary code.

    The code is a constant target: in training, this term's gradient pulls
    the pre-quantization latent toward the code and never differentiates
    through the sign pattern itself.
    """
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != code.bits.shape:
        raise QuantizerError(
            f"latent shape {latent.shape} does not match code shape {code.bits.shape}"
        )
    diff = latent - code.bits.astype(np.float64)
    return float(diff @ diff)


def codebook_utilization(indices: np.ndarray, codebook: LfqCodebook) -> tuple[float, float]:
    """Distinct-token fraction and normalized usage entropy of a token multiset.

    Returns ``(|distinct| / vocab_size, H(usage) / ln(vocab_size))``; the
    second value is 1 for a perfectly uniform histogram and 0 when a single
    token dominates.
    """
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if indices.size == 0:
        raise QuantizerError("empty token multiset")
    if np.any(indices < 0) or np.any(indices >= codebook.vocab_size):
        raise QuantizerError("token index out of range")
    counts = np.bincount(indices, minlength=codebook.vocab_size)
    fraction = float(np.count_nonzero(counts)) / codebook.vocab_size
    freqs = counts[counts > 0] / indices.size
    usage_entropy = float(-(freqs * np.log(freqs)).sum()) + 0.0  # avoid -0.0
    return fraction, usage_entropy / np.log(codebook.vocab_size)
