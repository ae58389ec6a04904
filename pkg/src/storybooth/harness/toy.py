"""Deterministic toy denoiser: a small seeded attention stack over latent tokens.

Stands in for a pretrained diffusion U-Net at desk scale. Latents are
B frames x N tokens x C channels. Each step runs the layer stack

    attention (unbounded, intra-frame bounded, or cross-frame bounded)
    -> optional cross-frame token merging at alpha(t)
    -> fixed seeded feedforward mix
    -> regional compositing of per-subject prompt biases under their masks

then blends the latents toward the stack output. Two properties make the
toy behave like a sampler without any noise prediction:

* frames start from mostly shared noise, so they begin alike and every
  cross-frame difference is something the dynamics produced;
* early steps run a saliency competition (above-average tokens are
  amplified, the exponent fading with t), so layout consolidates early
  and later steps mostly refine feature content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..attention import ProjectionSet, cross_frame_bounded_attention, leakage_fraction
from ..errors import NumericError, UsageError
from ..masks import (
    AttentionMask,
    DropoutParams,
    SubjectMask,
    TokenGrid,
    block_diagonal,
    build_cross_mask,
    build_intra_mask,
    membership_words,
    plan_masks,
)
from ..plan import StoryboardPlan
from ..rng import SCOPE_NOISE, SCOPE_PROMPT, SCOPE_WEIGHTS, keyed_generator, text_key
from ..tokenmerge import MergeSchedule, alpha_at, build_merge_gate, match_tokens, merge_tokens

BOUNDING_MODES = ("off", "intra", "cross")


@dataclass(frozen=True)
class ToyDenoiserConfig:
    layers: int = 1
    channels: int = 16
    heads: int = 2
    grid: TokenGrid = field(default_factory=lambda: TokenGrid(8, 8, 4))
    weight_seed: int = 0
    bias_scale: float = 0.1        # prompt bias added per layer inside a subject region
    sharpness: float = 2.0         # query/key gain; higher = more selective attention
    weight_jitter: float = 0.3     # deviation of the projections from identity
    ff_scale: float = 0.1
    step_size: float = 0.15        # fraction of the way toward the stack output per step
    noise_share: float = 0.95      # variance fraction of the initial noise common to all frames
    saliency_gain: float = 3.0
    saliency_decay: float = 2.0    # competition exponent is gain * (t / t_max) ** decay
    t_max: float = 1000.0

    def __post_init__(self):
        if min(self.layers, self.channels, self.heads) < 1:
            raise UsageError("layers, channels and heads must be positive")
        if self.channels % self.heads:
            raise UsageError("channels must be divisible by heads")
        if not 0.0 < self.step_size <= 1.0:
            raise UsageError("step_size must lie in (0, 1]")
        if not 0.0 <= self.noise_share <= 1.0:
            raise UsageError("noise_share must lie in [0, 1]")
        if self.sharpness <= 0 or self.t_max <= 0:
            raise UsageError("sharpness and t_max must be positive")


@dataclass(frozen=True, eq=False)
class LayerWeights:
    proj: ProjectionSet
    ff_in: np.ndarray
    ff_out: np.ndarray


def make_weights(config: ToyDenoiserConfig) -> list[LayerWeights]:
    """Seeded weights, one set per layer, keyed by (weight_seed, layer).

    Queries and keys share one map, so a token attends most to tokens whose
    features resemble its own; values stay close to identity.
    """
    c = config.channels
    eye = np.eye(c)
    jitter = config.weight_jitter / math.sqrt(c)
    out = []
    for layer in range(config.layers):
        rng = keyed_generator(config.weight_seed, layer, SCOPE_WEIGHTS)
        w_qk = math.sqrt(config.sharpness) * (eye + rng.normal(0.0, jitter, (c, c)))
        w_v = eye + rng.normal(0.0, jitter, (c, c))
        ff_in = rng.normal(0.0, 1.0 / math.sqrt(c), (c, 2 * c))
        ff_out = rng.normal(0.0, 1.0 / math.sqrt(2 * c), (2 * c, c))
        out.append(LayerWeights(ProjectionSet(w_qk, w_qk.copy(), w_v, config.heads), ff_in, ff_out))
    return out


def initial_latents(config: ToyDenoiserConfig, seed: int) -> np.ndarray:
    g = config.grid
    rng = keyed_generator(seed, SCOPE_NOISE)
    shared = rng.normal(0.0, 1.0, (1, g.tokens, config.channels))
    own = rng.normal(0.0, 1.0, (g.frame_count, g.tokens, config.channels))
    return math.sqrt(config.noise_share) * shared + math.sqrt(1.0 - config.noise_share) * own


def rms_norm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + 1e-6)


def prompt_bias(subject_id: str, local_prompt: str, layer: int, channels: int, seed: int) -> np.ndarray:
    """Unit-variance conditioning vector for one subject prompt at one layer."""
    rng = keyed_generator(seed, text_key(subject_id, local_prompt), layer, SCOPE_PROMPT)
    return rng.normal(0.0, 1.0, channels)


class RegionSampler(Protocol):
    """Region-conditioned update: adds layout/prompt conditioning to a layer's state."""

    def composite(self, h: np.ndarray, layer: int) -> np.ndarray:
        ...


class RegionalCompositor:
    """Adds each subject's prompt bias to the tokens inside its box.

    Biases are keyed by (subject id, local prompt, layer), so a subject whose
    local prompt is identical in two frames gets the identical bias there.
    """

    def __init__(self, plan: StoryboardPlan, grid: TokenGrid, channels: int, layers: int,
                 seed: int, scale: float):
        self.scale = scale
        self.fields = np.zeros((layers, grid.frame_count, grid.tokens, channels))
        masks = plan_masks(plan, grid)
        layouts = [layout for frame in plan.frames for layout in frame.layouts]
        for layout, mask in zip(layouts, masks):
            for layer in range(layers):
                vec = prompt_bias(layout.subject_id, layout.local_prompt, layer, channels, seed)
                self.fields[layer, mask.frame, mask.bits] += vec

    def composite(self, h, layer):
        return h + self.scale * self.fields[layer]


@dataclass(frozen=True, eq=False)
class StepContext:
    """Everything a step needs that does not change between steps."""

    config: ToyDenoiserConfig
    weights: Sequence[LayerWeights]
    masks: Sequence[SubjectMask]
    sampler: RegionSampler
    membership: np.ndarray

    @classmethod
    def build(cls, plan: StoryboardPlan, config: ToyDenoiserConfig, sampler: RegionSampler | None = None):
        if config.grid.frame_count != plan.prompt.frame_count:
            raise UsageError(
                f"grid has {config.grid.frame_count} frames but plan has {plan.prompt.frame_count}"
            )
        masks = plan_masks(plan, config.grid)
        if sampler is None:
            sampler = RegionalCompositor(plan, config.grid, config.channels, config.layers,
                                         config.weight_seed, config.bias_scale)
        words = membership_words(masks, config.grid, config.grid.frame_count)
        return cls(config, make_weights(config), masks, sampler, words)


@dataclass(frozen=True, eq=False)
class StepTrace:
    leakage: dict            # subject -> mean over layers
    masks: list              # per layer AttentionMask or None


def attention_mask(ctx: StepContext, bounding: str, dropout: DropoutParams, t: int, layer: int
                   ) -> AttentionMask | None:
    grid = ctx.config.grid
    if bounding == "off":
        return None
    if bounding == "cross":
        return build_cross_mask(ctx.masks, grid, dropout, timestep=t, layer=layer)
    if bounding == "intra":
        blocks = []
        for frame in range(grid.frame_count):
            frame_masks = [m for m in ctx.masks if m.frame == frame]
            blocks.append(build_intra_mask(frame_masks, grid, dropout, frame=frame,
                                           timestep=t, layer=layer))
        return block_diagonal(blocks)
    raise UsageError(f"unknown bounding mode {bounding!r}")


def _advance(z: np.ndarray, h: np.ndarray, t: float, cfg: ToyDenoiserConfig) -> np.ndarray:
    """Saliency competition on the stack output, blend, per-frame RMS normalization."""
    norms = np.sqrt(np.sum(h * h, axis=-1, keepdims=True))
    rel = norms / np.sqrt(np.mean(norms * norms, axis=1, keepdims=True))
    h = h * rel ** (cfg.saliency_gain * (t / cfg.t_max) ** cfg.saliency_decay)
    z_next = (1.0 - cfg.step_size) * z + cfg.step_size * h
    return z_next / np.sqrt(np.mean(z_next * z_next, axis=(1, 2), keepdims=True))


def toy_denoise_step(z: np.ndarray, t: int, ctx: StepContext, *, bounding: str = "cross",
                     merging: bool = True, schedule: MergeSchedule | None = None,
                     dropout: DropoutParams | None = None, same_subject_merge: bool = False,
                     step: int = 0) -> tuple[np.ndarray, StepTrace]:
    """One reverse step z_t -> z_{t-1}; also returns per-layer leakage and masks."""
    cfg = ctx.config
    dropout = dropout or DropoutParams()
    schedule = schedule or MergeSchedule()
    b, n = cfg.grid.frame_count, cfg.grid.tokens
    if z.shape != (b, n, cfg.channels):
        raise UsageError(f"latents must be {(b, n, cfg.channels)}, got {z.shape}")
    alpha = alpha_at(schedule, t) if merging else 0.0
    h = z
    leak_sum: dict = {}
    used = []
    for layer, w in enumerate(ctx.weights):
        mask = attention_mask(ctx, bounding, dropout, t, layer)
        used.append(mask)
        try:
            res = cross_frame_bounded_attention(rms_norm(h), w.proj, mask)
        except NumericError as exc:
            raise NumericError(f"step {step} (t={t}) layer {layer} {exc.stage}") from exc
        for subject, value in leakage_fraction(res.weights, ctx.masks).items():
            leak_sum[subject] = leak_sum.get(subject, 0.0) + value
        o = res.output
        if alpha != 0.0:
            gate = build_merge_gate(res.weights, b, n)
            match = match_tokens(gate, ctx.membership if same_subject_merge else None)
            o = merge_tokens(o, match, alpha)
        h = o + cfg.ff_scale * (np.tanh(o @ w.ff_in) @ w.ff_out)
        h = ctx.sampler.composite(h, layer)
        if not np.isfinite(h).all():
            raise NumericError(f"step {step} (t={t}) layer {layer}")
    z_next = _advance(z, h, t, cfg)
    if not np.isfinite(z_next).all():
        raise NumericError(f"step {step} (t={t}) update")
    leakage = {s: v / len(ctx.weights) for s, v in leak_sum.items()}
    return z_next, StepTrace(leakage, used)


def baseline_step(z: np.ndarray, t: int, ctx: StepContext) -> np.ndarray:
    """The plain toy transformer step: unbounded joint attention, no merging.

    Written without any of the mask or merge machinery so that disabling
    both mechanisms can be checked against it bit for bit.
    """
    from .. import kernels

    cfg = ctx.config
    b, n, c = z.shape
    h = z
    for layer, w in enumerate(ctx.weights):
        x = rms_norm(h).reshape(b * n, c)
        dk = w.proj.d_k
        q, k, v = x @ w.proj.w_q, x @ w.proj.w_k, x @ w.proj.w_v
        o = np.empty((b * n, w.proj.dim))
        for head in range(w.proj.heads):
            cols = slice(head * dk, (head + 1) * dk)
            scores = np.ascontiguousarray((q[:, cols] @ k[:, cols].T) * (1.0 / math.sqrt(dk)))
            o[:, cols] = kernels.masked_softmax(scores, None) @ v[:, cols]
        o = o.reshape(b, n, c)
        h = o + cfg.ff_scale * (np.tanh(o @ w.ff_in) @ w.ff_out)
        h = ctx.sampler.composite(h, layer)
    return _advance(z, h, t, cfg)
