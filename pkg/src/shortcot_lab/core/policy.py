"""Tiny autoregressive token policy with exact log-probabilities and gradients.

The policy is a pooled-embedding, one-hidden-layer network. For a prompt
``q`` and a generated prefix the context feature vector is::

    [ mean(E[q]) | sum_k 0.9^(n-1-k) E[prefix_k] | n / (S_MAX + M) | phase ]

followed by ``tanh`` hidden units and a linear read-out over the full
vocabulary. Tokens outside the current phase are excluded from the softmax
normaliser, so their probability is exactly zero.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from shortcot_lab.core.env import SCENE_CELLS, VOCAB
from shortcot_lab.core.errors import ConfigError, ContractError, DimensionError, NumericError
from shortcot_lab.core.penalties import apply_cap

logger = logging.getLogger(__name__)

Phase = Literal["semantic", "scene"]

S_MAX = 64
DECAY = 0.9
EMBED_DIM = 16
HIDDEN_DIM = 32
INIT_SCALE = 0.05
POSITION_SCALE = S_MAX + SCENE_CELLS

# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """All learnable arrays of the policy plus the vocabulary layout.

    Instances are treated as immutable snapshots: updates produce new
    objects. The same class doubles as the container for gradients and
    optimizer moments.
    """

    embeddings: np.ndarray  # (V, d)
    w_hidden: np.ndarray  # (2d + 2, h)
    b_hidden: np.ndarray  # (h,)
    w_out: np.ndarray  # (h, V)
    b_out: np.ndarray  # (V,)
    prompt_size: int
    semantic_size: int
    scene_size: int
    version: int = 0

    ARRAY_NAMES = ("embeddings", "w_hidden", "b_hidden", "w_out", "b_out")

    def __post_init__(self) -> None:
        d = self.embeddings.shape[1]
        h = self.b_hidden.shape[0]
        expected = {
            "embeddings": (self.total_vocab, d),
            "w_hidden": (2 * d + 2, h),
            "b_hidden": (h,),
            "w_out": (h, self.total_vocab),
            "b_out": (self.total_vocab,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )

    # -- layout ----------------------------------------------------------

    @property
    def total_vocab(self) -> int:
        return self.prompt_size + self.semantic_size + self.scene_size

    @property
    def embed_dim(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(self.b_hidden.shape[0])

    @property
    def header(self) -> tuple[int, int, int, int, int]:
        """``(semantic, scene, prompt, d, h)`` as stored in checkpoints."""
        return (self.semantic_size, self.scene_size, self.prompt_size,
                self.embed_dim, self.hidden_dim)

    def arrays(self) -> Iterator[np.ndarray]:
        """Yield the arrays in checkpoint order."""
        for name in self.ARRAY_NAMES:
            yield getattr(self, name)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    # -- arithmetic ------------------------------------------------------

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, flat: np.ndarray, version: int | None = None) -> PolicyParams:
        """Return a copy whose arrays are filled from a flat vector."""
        if flat.shape != (self.size,):
            raise DimensionError(f"Flat vector has shape {flat.shape}, expected ({self.size},)")
        arrays: dict[str, np.ndarray] = {}
        offset = 0
        for name, arr in zip(self.ARRAY_NAMES, self.arrays(), strict=True):
            arrays[name] = flat[offset: offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size
        return replace(self, **arrays, version=self.version if version is None else version)

    def zeros_like(self) -> PolicyParams:
        return self.with_flat(np.zeros(self.size))

    def copy(self) -> PolicyParams:
        return self.with_flat(self.flatten())

    def __add__(self, other: PolicyParams) -> PolicyParams:
        return self.with_flat(self.flatten() + other.flatten())

    def __sub__(self, other: PolicyParams) -> PolicyParams:
        return self.with_flat(self.flatten() - other.flatten())

    def __mul__(self, scalar: float) -> PolicyParams:
        return self.with_flat(self.flatten() * scalar)

    __rmul__ = __mul__

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(a).all()) for a in self.arrays())

    def equals(self, other: PolicyParams) -> bool:
        """Bitwise equality of every array and of the layout."""
        return self.header == other.header and all(
            a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays(), strict=True)
        )


def init_params(
    prompt_size: int,
    semantic_size: int,
    scene_size: int,
    seed: int,
    *,
    embed_dim: int = EMBED_DIM,
    hidden_dim: int = HIDDEN_DIM,
) -> PolicyParams:
    """Draw every entry i.i.d. uniform in [-0.05, 0.05] from a seeded stream."""
    sizes = {"prompt": prompt_size, "semantic": semantic_size, "scene": scene_size,
             "embed_dim": embed_dim, "hidden_dim": hidden_dim}
    for name, value in sizes.items():
        if value <= 0:
            raise ConfigError(f"Policy dimension {name} must be positive, got {value}")
    rng = np.random.default_rng(seed)
    v = prompt_size + semantic_size + scene_size

    def _draw(*shape: int) -> np.ndarray:
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    return PolicyParams(
        embeddings=_draw(v, embed_dim),
        w_hidden=_draw(2 * embed_dim + 2, hidden_dim),
        b_hidden=_draw(hidden_dim),
        w_out=_draw(hidden_dim, v),
        b_out=_draw(v),
        prompt_size=prompt_size,
        semantic_size=semantic_size,
        scene_size=scene_size,
    )


def init_for_vocab(seed: int, *, embed_dim: int = EMBED_DIM,
                   hidden_dim: int = HIDDEN_DIM) -> PolicyParams:
    """:func:`init_params` sized to the task vocabulary."""
    return init_params(VOCAB.prompt_size, VOCAB.semantic_size, VOCAB.scene_size, seed,
                       embed_dim=embed_dim, hidden_dim=hidden_dim)


def check_vocabulary(params: PolicyParams) -> None:
    """Raise :class:`DimensionError` unless *params* matches the task vocabulary."""
    expected = (VOCAB.semantic_size, VOCAB.scene_size, VOCAB.prompt_size)
    if params.header[:3] != expected:
        raise DimensionError(
            f"Checkpoint vocabulary (semantic, scene, prompt) = {params.header[:3]} "
            f"does not match the task vocabulary {expected}"
        )


# ---------------------------------------------------------------------------
# Masks and features
# ---------------------------------------------------------------------------


def _phase_slice(params: PolicyParams, phase: Phase) -> slice:
    start = params.prompt_size
    if phase == "semantic":
        return slice(start, start + params.semantic_size)
    start += params.semantic_size
    return slice(start, start + params.scene_size)


def phase_mask(params: PolicyParams, phase: Phase) -> np.ndarray:
    mask = np.zeros(params.total_vocab, dtype=bool)
    mask[_phase_slice(params, phase)] = True
    return mask


def context_state(
    params: PolicyParams,
    prompt_tokens: Sequence[int],
    generated_prefix: Sequence[int],
    phase: Phase,
) -> np.ndarray:
    """Feature vector of length 2d + 2 for one generation step."""
    if phase not in ("semantic", "scene"):
        raise ContractError(f"Unknown phase: {phase!r}")
    emb = params.embeddings
    decayed = np.zeros(params.embed_dim)
    for token in generated_prefix:
        decayed = DECAY * decayed + emb[token]
    return np.concatenate([
        emb[list(prompt_tokens)].mean(axis=0),
        decayed,
        [len(generated_prefix) / POSITION_SCALE, 0.0 if phase == "semantic" else 1.0],
    ])


def forward_logits(params: PolicyParams, state: np.ndarray, phase: Phase) -> np.ndarray:
    """Logits over the full vocabulary, ``-inf`` outside the phase mask."""
    if state.shape != (2 * params.embed_dim + 2,):
        expected = 2 * params.embed_dim + 2
        raise DimensionError(f"State has shape {state.shape}, expected ({expected},)")
    if not np.isfinite(state).all():
        raise NumericError("Non-finite context state")
    hidden = np.tanh(state @ params.w_hidden + params.b_hidden)
    logits = hidden @ params.w_out + params.b_out
    return np.where(phase_mask(params, phase), logits, -np.inf)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted log-softmax along the last axis; ``-inf`` entries stay ``-inf``."""
    shift = logits.max(axis=-1, keepdims=True)
    shifted = logits - shift
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


@dataclass
class Rollout:
    """One sampled response ``o = (s, t)`` with per-position log-probabilities.

    ``logprob_new`` is filled at sampling time; ``logprob_old`` and
    ``logprob_ref`` are filled by the trainer.
    """

    prompt_tokens: tuple[int, ...]
    semantic_tokens: tuple[int, ...]
    scene_tokens: tuple[int, ...]
    logprob_new: np.ndarray
    logprob_old: np.ndarray | None = None
    logprob_ref: np.ndarray | None = None
    seed: int | None = None
    truncated: bool = field(default=False)

    @property
    def length(self) -> int:
        return len(self.semantic_tokens) + len(self.scene_tokens)


def _sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cumulative = np.cumsum(probs)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, len(probs) - 1)


def _step_probs(
    params: PolicyParams,
    prompt_mean: np.ndarray,
    decayed: np.ndarray,
    position: int,
    phase: Phase,
) -> np.ndarray:
    span = _phase_slice(params, phase)
    state = np.concatenate([
        prompt_mean, decayed, [position / POSITION_SCALE, 0.0 if phase == "semantic" else 1.0],
    ])
    hidden = np.tanh(state @ params.w_hidden + params.b_hidden)
    logits = hidden @ params.w_out[:, span] + params.b_out[span]
    return np.exp(log_softmax(logits))


def sample_rollout(
    params: PolicyParams,
    prompt_tokens: Sequence[int],
    rng: np.random.Generator,
    *,
    seed: int | None = None,
    cap_length: int | None = None,
    use_cot: bool = True,
) -> Rollout:
    """Sample semantic tokens until end-of-CoT or S_MAX, then M scene tokens.

    The scene phase draws from its own stream, seeded first from *rng*, so a
    with-CoT and a without-CoT sample from equal *rng* states share it.
    *cap_length* truncates the CoT before the scene phase conditions on it.
    ``use_cot=False`` forces an immediate end-of-CoT marker.
    """
    scene_rng = np.random.default_rng(int(rng.integers(0, 2**63)))
    emb = params.embeddings
    prompt = tuple(int(t) for t in prompt_tokens)
    prompt_mean = emb[list(prompt)].mean(axis=0)
    eoc = VOCAB.eoc_id
    semantic_start = params.prompt_size

    semantic: list[int] = []
    if use_cot:
        decayed = np.zeros(params.embed_dim)
        while len(semantic) < S_MAX:
            probs = _step_probs(params, prompt_mean, decayed, len(semantic), "semantic")
            token = semantic_start + _sample_index(probs, rng)
            semantic.append(token)
            decayed = DECAY * decayed + emb[token]
            if token == eoc:
                break
    else:
        semantic = [eoc]
    truncated = semantic[-1] != eoc

    s = tuple(semantic)
    if cap_length is not None:
        s = apply_cap(s, cap_length)
        truncated = s[-1] != eoc
    decayed = np.zeros(params.embed_dim)
    for token in s:
        decayed = DECAY * decayed + emb[token]

    scene_start = params.prompt_size + params.semantic_size
    scene: list[int] = []
    for k in range(SCENE_CELLS):
        probs = _step_probs(params, prompt_mean, decayed, len(s) + k, "scene")
        token = scene_start + _sample_index(probs, scene_rng)
        scene.append(token)
        decayed = DECAY * decayed + emb[token]

    t = tuple(scene)
    return Rollout(
        prompt_tokens=prompt,
        semantic_tokens=s,
        scene_tokens=t,
        logprob_new=logprob_sequence(params, prompt, s, t),
        seed=seed,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# Teacher-forced evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SequenceCache:
    """Intermediate values of a teacher-forced pass, kept for backprop."""

    prompt_tokens: np.ndarray
    tokens: np.ndarray  # s followed by t
    decay: np.ndarray  # (L, L) prefix-summary weights
    states: np.ndarray  # (L, 2d + 2)
    hidden: np.ndarray  # (L, h)
    mask: np.ndarray  # (L, V) allowed tokens per position
    logp: np.ndarray  # (L, V), -inf where masked

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)

    @property
    def token_logp(self) -> np.ndarray:
        return self.logp[np.arange(len(self.tokens)), self.tokens]


def _check_phases(params: PolicyParams, s: Sequence[int], t: Sequence[int]) -> None:
    sem, scn = _phase_slice(params, "semantic"), _phase_slice(params, "scene")
    if not s:
        raise ContractError("Semantic sequence is empty")
    if len(t) != SCENE_CELLS:
        raise ContractError(f"Scene sequence must have {SCENE_CELLS} tokens, got {len(t)}")
    if any(not sem.start <= tok < sem.stop for tok in s):
        raise ContractError("Semantic position holds a token outside the semantic mask")
    if any(not scn.start <= tok < scn.stop for tok in t):
        raise ContractError("Scene position holds a token outside the scene mask")
    eoc = VOCAB.eoc_id
    if eoc in s[:-1]:
        raise ContractError("End-of-CoT marker appears before the end of the CoT")
    if s[-1] != eoc and len(s) < S_MAX:
        raise ContractError("CoT without end-of-CoT marker must be S_MAX long")


def _decay_matrix(length: int) -> np.ndarray:
    j = np.arange(length)[:, None]
    k = np.arange(length)[None, :]
    return np.where(k < j, DECAY ** np.maximum(j - 1 - k, 0), 0.0)


def forward_sequence(
    params: PolicyParams,
    prompt_tokens: Sequence[int],
    s: Sequence[int],
    t: Sequence[int],
) -> SequenceCache:
    """Evaluate every position of ``(s, t)`` under *params* in one pass."""
    _check_phases(params, s, t)
    tokens = np.asarray([*s, *t], dtype=np.int64)
    prompt = np.asarray(prompt_tokens, dtype=np.int64)
    length = len(tokens)
    emb = params.embeddings
    decay = _decay_matrix(length)
    positions = np.arange(length) / POSITION_SCALE
    phase_flags = (np.arange(length) >= len(s)).astype(float)
    states = np.column_stack([
        np.broadcast_to(emb[prompt].mean(axis=0), (length, params.embed_dim)),
        decay @ emb[tokens],
        positions,
        phase_flags,
    ])
    hidden = np.tanh(states @ params.w_hidden + params.b_hidden)
    logits = hidden @ params.w_out + params.b_out
    mask = np.zeros((length, params.total_vocab), dtype=bool)
    mask[: len(s), _phase_slice(params, "semantic")] = True
    mask[len(s):, _phase_slice(params, "scene")] = True
    logp = log_softmax(np.where(mask, logits, -np.inf))
    return SequenceCache(prompt, tokens, decay, states, hidden, mask, logp)


def logprob_sequence(
    params: PolicyParams,
    prompt_tokens: Sequence[int],
    s: Sequence[int],
    t: Sequence[int],
) -> np.ndarray:
    """Per-position log-probability of each recorded token given its prefix."""
    return forward_sequence(params, prompt_tokens, s, t).token_logp


# ---------------------------------------------------------------------------
# Reverse-mode gradients
# ---------------------------------------------------------------------------


def backward(params: PolicyParams, cache: SequenceCache, dlogits: np.ndarray) -> PolicyParams:
    """Push ``d objective / d logits`` (L x V) back to every parameter array."""
    d = params.embed_dim
    hidden, states = cache.hidden, cache.states

    d_w_out = hidden.T @ dlogits
    d_b_out = dlogits.sum(axis=0)
    d_pre = (dlogits @ params.w_out.T) * (1.0 - hidden**2)
    d_w_hidden = states.T @ d_pre
    d_b_hidden = d_pre.sum(axis=0)
    d_states = d_pre @ params.w_hidden.T

    d_emb = np.zeros_like(params.embeddings)
    prompt_grad = d_states[:, :d].sum(axis=0) / len(cache.prompt_tokens)
    np.add.at(d_emb, cache.prompt_tokens, prompt_grad)
    np.add.at(d_emb, cache.tokens, cache.decay.T @ d_states[:, d: 2 * d])

    return replace(
        params,
        embeddings=d_emb,
        w_hidden=d_w_hidden,
        b_hidden=d_b_hidden,
        w_out=d_w_out,
        b_out=d_b_out,
    )


def logprob_dlogits(cache: SequenceCache, weights: np.ndarray) -> np.ndarray:
    """``d/dz`` of ``sum_j w_j log p(token_j)``: ``w_j (onehot_j - p_j)``."""
    grad = -cache.probs * weights[:, None]
    grad[np.arange(len(cache.tokens)), cache.tokens] += weights
    return grad


def _check_weights(weights: np.ndarray, length: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (length,):
        raise ContractError(f"Expected {length} per-position weights, got shape {w.shape}")
    if not np.isfinite(w).all():
        raise NumericError("Non-finite per-position weights")
    return w


def grad_logprob_sum(
    params: PolicyParams,
    prompt_tokens: Sequence[int],
    s: Sequence[int],
    t: Sequence[int],
    weights: np.ndarray,
) -> PolicyParams:
    """Gradient of ``sum_j w_j log pi(token_j | prefix_j)`` with respect to *params*."""
    cache = forward_sequence(params, prompt_tokens, s, t)
    w = _check_weights(weights, len(cache.tokens))
    return backward(params, cache, logprob_dlogits(cache, w))


def _kl_terms(cache_a: SequenceCache, cache_b: SequenceCache) -> tuple[np.ndarray, np.ndarray]:
    log_ratio = np.where(cache_a.mask, cache_a.logp - np.where(cache_b.mask, cache_b.logp, 0.0),
                         0.0)
    values = (cache_a.probs * log_ratio).sum(axis=1)
    return values, log_ratio


def kl_values(cache_a: SequenceCache, cache_b: SequenceCache) -> np.ndarray:
    return _kl_terms(cache_a, cache_b)[0]


def kl_dlogits(cache_a: SequenceCache, cache_b: SequenceCache, weights: np.ndarray) -> np.ndarray:
    """``d/dz_a`` of ``sum_j w_j KL_j``: ``w_j p_a (log p_a - log p_b - KL_j)``."""
    values, log_ratio = _kl_terms(cache_a, cache_b)
    return weights[:, None] * cache_a.probs * (log_ratio - values[:, None])


def kl_exact(
    params_a: PolicyParams,
    params_b: PolicyParams,
    prompt_tokens: Sequence[int],
    s: Sequence[int],
    t: Sequence[int],
) -> np.ndarray:
    """Exact per-position ``KL(pi_a || pi_b)`` over the phase-masked vocabulary."""
    if params_a.header != params_b.header:
        raise DimensionError(f"Parameter layouts differ: {params_a.header} vs {params_b.header}")
    return kl_values(
        forward_sequence(params_a, prompt_tokens, s, t),
        forward_sequence(params_b, prompt_tokens, s, t),
    )


def kl_gradient(
    params_a: PolicyParams,
    params_b: PolicyParams,
    prompt_tokens: Sequence[int],
    s: Sequence[int],
    t: Sequence[int],
    weights: np.ndarray | None = None,
) -> PolicyParams:
    """Gradient of ``sum_j w_j KL_j`` with respect to *params_a* (default w = 1)."""
    cache_a = forward_sequence(params_a, prompt_tokens, s, t)
    cache_b = forward_sequence(params_b, prompt_tokens, s, t)
    length = len(cache_a.tokens)
    w = np.ones(length) if weights is None else _check_weights(weights, length)
    return backward(params_a, cache_a, kl_dlogits(cache_a, cache_b, w))
