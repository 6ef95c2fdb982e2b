"""Training: inverse-square-root warmup schedule, token-budget batching, Adam."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from . import checkpoint as ckpt_io
from .errors import ConfigError, ExampleTooLong, TrainingDiverged
from .model import EncoderBatch, Transformer
from .numerics import Graph, backward
from .objective import Example, MaskedBatch, joint_loss, make_batch, translation_nll

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_steps: int = 1000
    tokens_per_batch: int = 3072
    warmup_steps: int = 4000
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    seed: int = 0
    mlm_enabled: bool = False
    mlm_weight: float = 1.0
    mask_rate: float = 0.16
    mask_cap: int = 20
    translation: bool = True
    label_smoothing: float = 0.0
    clip_norm: float = 1.0  # 0 disables clipping
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    log_every: int = 10
    freeze: tuple[str, ...] = ()
    inject_nan_step: int = 0  # debugging aid: poison the loss at this step

    def __post_init__(self):
        for key in ("max_steps", "tokens_per_batch", "warmup_steps", "mask_cap", "log_every"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not self.translation and not self.mlm_enabled:
            raise ConfigError("nothing to train: translation and mlm both disabled")
        self.freeze = tuple(self.freeze)


def lr_schedule(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    """Linear warmup then inverse-square-root decay."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return scale * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


def make_batches(examples: Sequence[Example], tokens_per_batch: int, rng: np.random.Generator) -> list[list[Example]]:
    """One epoch of batches, filled greedily in shuffled order.

    A batch closes when adding the next example would push either its source
    or its target token total past ``tokens_per_batch``.
    """
    for ex in examples:
        if ex.size > tokens_per_batch:
            raise ExampleTooLong(f"example with {ex.size} tokens exceeds budget {tokens_per_batch}")
    batches: list[list[Example]] = []
    current: list[Example] = []
    n_src = n_tgt = 0
    for i in rng.permutation(len(examples)):
        ex = examples[i]
        s, t = len(ex.source), len(ex.target)
        if current and max(n_src + s, n_tgt + t) > tokens_per_batch:
            batches.append(current)
            current, n_src, n_tgt = [], 0, 0
        current.append(ex)
        n_src += s
        n_tgt += t
    if current:
        batches.append(current)
    return batches


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: dict, grads: dict[str, np.ndarray], state: OptimizerState, lr: float, b1: float, b2: float, eps: float
) -> None:
    """In-place bias-corrected Adam step over ``grads``; increments ``state.step``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)


def _poison(model: Transformer):
    p = model.params["encoder.final_norm.bias"]
    saved = p.data
    p.data = saved + np.nan
    return p, saved


def train_step(
    model: Transformer,
    batch: MaskedBatch,
    state: OptimizerState,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
    lr: float | None = None,
) -> dict[str, float]:
    """Forward, backward and one Adam update. Raises TrainingDiverged on non-finite loss or gradients."""
    step = state.step + 1
    if lr is None:
        lr = lr_schedule(step, model.config.d_model, cfg.warmup_steps, cfg.lr_scale)
    poisoned = _poison(model) if cfg.inject_nan_step == step else None
    try:
        with Graph() as graph:
            total, nll, mlm = joint_loss(
                model, batch, train=True, rng=rng, mlm_weight=cfg.mlm_weight,
                smoothing=cfg.label_smoothing, translation=cfg.translation,
            )
    except TrainingDiverged as exc:
        raise TrainingDiverged(f"step {step}: {exc}") from None
    finally:
        if poisoned is not None:
            poisoned[0].data = poisoned[1]
    backward(graph, total)

    grads: dict[str, np.ndarray] = {}
    sq = 0.0
    for name, p in model.params.items():
        g, p.grad = p.grad, None
        if g is None or any(name.startswith(f) for f in cfg.freeze):
            continue
        grads[name] = g
        sq += float(np.vdot(g, g))
    grad_norm = math.sqrt(sq)
    if not math.isfinite(grad_norm):
        raise TrainingDiverged(f"step {step}: non-finite gradient norm")
    if cfg.clip_norm > 0 and grad_norm > cfg.clip_norm:
        factor = cfg.clip_norm / grad_norm
        grads = {k: (g * factor).astype(g.dtype, copy=False) for k, g in grads.items()}
    adam_update(model.params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.epsilon)
    return {
        "step": step,
        "total": float(total.data),
        "nll": float(nll.data) if nll is not None else float("nan"),
        "mlm": float(mlm.data) if mlm is not None else 0.0,
        "lr": lr,
        "grad_norm": grad_norm,
        "sentences": len(batch),
    }


def format_metrics(m: dict) -> str:
    parts = []
    for k, v in m.items():
        parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


def train(
    model: Transformer,
    examples: Sequence[Example],
    cfg: TrainConfig,
    log_streams: Iterable[TextIO] = (),
    checkpoint_dir: str | Path | None = None,
    on_step: Callable[[dict], None] | None = None,
    state: OptimizerState | None = None,
) -> list[dict]:
    """Run ``cfg.max_steps`` updates, cycling through shuffled epochs.

    Metrics go to ``log_streams`` as key=value lines every ``log_every`` steps;
    every ``checkpoint_every`` steps the full parameter set is saved as NTC1.
    Deterministic for a fixed seed: one generator drives shuffling, masking
    and dropout.
    """
    rng = np.random.default_rng(cfg.seed)
    state = state or OptimizerState()
    streams = list(log_streams)
    history: list[dict] = []
    vocab_size = model.config.src_vocab
    while state.step < cfg.max_steps:
        for group in make_batches(examples, cfg.tokens_per_batch, rng):
            batch = make_batch(group, rng, vocab_size, cfg.mlm_enabled, cfg.mask_rate, cfg.mask_cap)
            metrics = train_step(model, batch, state, cfg, rng)
            history.append(metrics)
            if on_step is not None:
                on_step(metrics)
            if metrics["step"] % cfg.log_every == 0 or metrics["step"] == cfg.max_steps:
                line = format_metrics(metrics)
                for s in streams:
                    s.write(line + "\n")
                    s.flush()
            if checkpoint_dir is not None and cfg.checkpoint_every and metrics["step"] % cfg.checkpoint_every == 0:
                save_model(model, Path(checkpoint_dir) / f"step{metrics['step']}.ntc")
            if state.step >= cfg.max_steps:
                break
    return history


def save_model(model: Transformer, path: str | Path, extra: dict[str, str] | None = None) -> None:
    meta = {k: str(v) for k, v in model.config.to_dict().items()}
    meta["format"] = "docnmt-1"
    meta.update(extra or {})
    ckpt_io.save(ckpt_io.Checkpoint.from_params(model.params, metadata=meta), path)


def evaluate_nll(model: Transformer, examples: Sequence[Example], batch_size: int = 64) -> float:
    """Token-weighted mean translation NLL in eval mode."""
    total = 0.0
    count = 0
    for i in range(0, len(examples), batch_size):
        group = examples[i : i + batch_size]
        batch = make_batch(group)
        enc = model.encode(EncoderBatch.collate(batch.inputs))
        n_tok = sum(len(ex.target) - 1 for ex in group)
        total += float(translation_nll(model, batch, enc).data) * n_tok
        count += n_tok
    return total / count
