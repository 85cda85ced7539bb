"""Teacher-forced training with Adam.

Batches are padded to the longest sequence in the batch and masked, so every
epoch touches every sample regardless of vertex count. Shuffling is driven by
a dedicated RNG seeded from the config, which makes runs reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .codec import CodecError, encode_polygon
from .network import ModelConfig, SequenceOverflowError, _teacher_forced_batch, init_params


@dataclass
class TrainResult:
    params: dict
    config: ModelConfig
    adam: ad.AdamState
    history: list[dict] = field(default_factory=list)
    steps: int = 0
    n_skipped: int = 0
    stopped_early: bool = False


def encode_samples(samples, config: ModelConfig):
    """Encode rings to token sequences, dropping samples the codec cannot express.

    A sample is skipped (and counted) when its sequence exceeds max_seq_len
    or its ring does not survive grid quantization. Returns (images,
    sequences, n_skipped). ``samples`` is any iterable of objects with
    ``.image`` and ``.ring`` attributes, or (image, ring) pairs.
    """
    vocab = config.vocab
    images, seqs, skipped = [], [], 0
    for s in samples:
        image, ring = (s.image, s.ring) if hasattr(s, "image") else s
        try:
            seq = encode_polygon(ring, vocab)
        except CodecError:
            skipped += 1
            continue
        if len(seq) > config.max_seq_len:
            skipped += 1
            continue
        images.append(np.asarray(image, dtype=np.float32))
        seqs.append(seq)
    if not images:
        raise SequenceOverflowError("no sample fits within max_seq_len")
    return images, seqs, skipped


def train(
    samples,
    config: ModelConfig,
    *,
    epochs: int = 20,
    batch_size: int = 32,
    learning_rate: float = 2e-4,
    seed: int | None = None,
    params: dict | None = None,
    adam: ad.AdamState | None = None,
    max_steps: int | None = None,
    eval_every: int | None = None,
    lr_scales: dict[str, float] | None = None,
    stop_fn=None,
    log_fn=None,
) -> TrainResult:
    """Run the optimization loop; returns trained parameters and a loss history.

    ``stop_fn(step, params)`` is polled every ``eval_every`` optimizer steps
    (and after each epoch) and may return True to stop early. ``log_fn`` gets
    one dict per epoch. ``lr_scales`` maps parameter-name prefixes to
    learning-rate factors (see :func:`polygonizer.autodiff.adam_step`), and
    ``learning_rate`` may be a callable ``step -> lr`` for scheduled decay.
    """
    if params is None:
        params = init_params(config)
    if adam is None:
        adam = ad.AdamState.init(params)
    images, seqs, n_skipped = encode_samples(samples, config)
    n = len(seqs)
    rng = np.random.default_rng(config.seed if seed is None else seed)

    result = TrainResult(params=params, config=config, adam=adam, n_skipped=n_skipped)
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_nll = 0.0
        epoch_pred = 0
        t0 = time.monotonic()
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            batch_images = np.stack([images[i] for i in idx])
            batch_seqs = [seqs[i] for i in idx]
            with ad.Tape() as tape:
                loss, stats = _teacher_forced_batch(params, config, batch_images, batch_seqs)
                ad.zero_grads(params)
                tape.backward(loss)
            lr = learning_rate(step) if callable(learning_rate) else learning_rate
            ad.adam_step(params, adam, lr=lr, lr_scales=lr_scales)
            epoch_nll += float(loss.data) * stats["n_predicted"]
            epoch_pred += stats["n_predicted"]
            step += 1
            if eval_every and stop_fn and step % eval_every == 0 and stop_fn(step, params):
                result.stopped_early = True
                break
            if max_steps is not None and step >= max_steps:
                break
        entry = {
            "epoch": epoch,
            "loss": epoch_nll / max(epoch_pred, 1),
            "steps": step,
            "seconds": round(time.monotonic() - t0, 3),
        }
        result.history.append(entry)
        if log_fn:
            log_fn(entry)
        if result.stopped_early or (max_steps is not None and step >= max_steps):
            break
        if stop_fn and not eval_every and stop_fn(step, params):
            result.stopped_early = True
            break
    result.steps = step
    return result
