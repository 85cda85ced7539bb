"""The image-to-sequence network: residual conv encoder, attention LSTM decoder.

Encoder: stem conv + S pooled residual stages; the outputs of the last two
stages are fused (deeper one upsampled 2x nearest, channel-concatenated,
projected by 1x1 conv) and a fixed sinusoidal positional encoding is added.
Decoder: per step, the sum of token/dimension/position embeddings is
concatenated with an additive-attention context over the feature-map
columns and fed through a stacked LSTM; a linear head produces logits over
the coordinate-token vocabulary.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import (
    TokenSequence,
    TokenVocabulary,
    MalformedSequenceError,
    TooFewVerticesError,
    decode_tokens,
    dim_for_position,
)
from .geometry import PolygonRing


class SequenceOverflowError(ValueError):
    """Decode position reached max_seq_len."""


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    channels: tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 2
    feature_dim: int = 64
    embed_dim: int = 128
    hidden_dim: int = 128
    attention_dim: int = 64
    n_lstm_layers: int = 3
    max_seq_len: int = 30
    pos_scale: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.embed_dim != self.hidden_dim:
            raise ValueError("embed_dim must equal hidden_dim (embeddings are summed)")
        if self.n_lstm_layers < 1:
            raise ValueError("need at least one LSTM layer")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be >= 2")
        if len(self.channels) < 2:
            raise ValueError("need at least two encoder stages to fuse")
        if self.feature_dim % 4 != 0:
            raise ValueError("feature_dim must be divisible by 4 (2-d sinusoidal encoding)")
        if self.input_size % (2 ** len(self.channels)) != 0:
            raise ValueError("input_size must be divisible by the total pooling factor")

    @property
    def vocab(self) -> TokenVocabulary:
        return TokenVocabulary(self.input_size)

    def feature_map_shape(self) -> tuple[int, int, int]:
        """(channels, height, width) of the fused encoder output."""
        side = self.input_size // (2 ** (len(self.channels) - 1))
        return (self.feature_dim, side, side)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


def full_scale_config() -> ModelConfig:
    """The published-scale layout: 224 px input, 512-dim features and hidden state."""
    return ModelConfig(
        input_size=224,
        channels=(64, 128, 256, 512),
        blocks_per_stage=2,
        feature_dim=512,
        embed_dim=512,
        hidden_dim=512,
        attention_dim=512,
        n_lstm_layers=3,
        max_seq_len=64,
    )


def init_params(config: ModelConfig, dtype=np.float32) -> dict[str, Tensor]:
    """Deterministic parameter initialization from config.seed."""
    rng = np.random.default_rng(config.seed)

    def t(arr):
        return Tensor(arr.astype(dtype))

    def conv(cout, cin, k, gain=1.0):
        std = gain * np.sqrt(2.0 / (cin * k * k))
        return t(rng.normal(0.0, std, (cout, cin, k, k)))

    p: dict[str, Tensor] = {}
    ch = config.channels
    p["enc.stem.w"] = conv(ch[0], 3, 3)
    p["enc.stem.b"] = t(np.zeros(ch[0]))
    for i, c in enumerate(ch):
        cin = ch[0] if i == 0 else ch[i - 1]
        p[f"enc.s{i}.in.w"] = conv(c, cin, 3)
        p[f"enc.s{i}.in.b"] = t(np.zeros(c))
        for j in range(config.blocks_per_stage):
            p[f"enc.s{i}.b{j}.c1.w"] = conv(c, c, 3)
            p[f"enc.s{i}.b{j}.c1.b"] = t(np.zeros(c))
            # residual branch ends small so deep stacks stay stable without norm layers
            p[f"enc.s{i}.b{j}.c2.w"] = conv(c, c, 3, gain=0.5)
            p[f"enc.s{i}.b{j}.c2.b"] = t(np.zeros(c))
    p["enc.proj.w"] = conv(config.feature_dim, ch[-2] + ch[-1], 1)
    p["enc.proj.b"] = t(np.zeros(config.feature_dim))

    de, dh, df, da = config.embed_dim, config.hidden_dim, config.feature_dim, config.attention_dim
    vocab_size = config.vocab.vocab_size
    # deep LSTM stacks train poorly from near-zero inputs, so embeddings start
    # at a healthy scale (their sum has roughly unit variance)
    p["dec.tok_emb"] = t(rng.normal(0.0, 0.5, (vocab_size, de)))
    p["dec.dim_emb"] = t(rng.normal(0.0, 0.5, (3, de)))
    p["dec.pos_emb"] = t(rng.normal(0.0, 0.5, (config.max_seq_len, de)))
    k = 1.0 / np.sqrt(dh)
    for l in range(config.n_lstm_layers):
        din = de + df if l == 0 else dh
        p[f"dec.l{l}.wx"] = t(rng.uniform(-k, k, (4 * dh, din)))
        p[f"dec.l{l}.wh"] = t(rng.uniform(-k, k, (4 * dh, dh)))
        b = np.zeros(4 * dh)
        b[dh : 2 * dh] = 1.0  # forget-gate bias
        p[f"dec.l{l}.b"] = t(b)
    # the attention context enters through zero weights: early training then
    # puts no pressure on the (not yet useful) encoder, which would otherwise
    # get shrunk into dead ReLUs before the decoder ever asks for image detail
    p["dec.l0.wx"].data[:, de:] = 0.0
    p["attn.wq"] = t(rng.normal(0.0, 1.0 / np.sqrt(dh), (da, dh)))
    p["attn.wk"] = t(rng.normal(0.0, 1.0 / np.sqrt(df), (da, df)))
    p["attn.v"] = t(rng.normal(0.0, 1.0 / np.sqrt(da), (da,)))
    p["head.w"] = t(rng.normal(0.0, 1e-3, (vocab_size, dh)))
    p["head.b"] = t(np.zeros(vocab_size))
    _calibrate_feature_scale(p, config, rng)
    return p


# Convolutional features should carry a healthy signal into attention and the
# LSTM without drowning out the pos_scale-weighted position code.
FEATURE_STD_TARGET = 0.5


def _calibrate_feature_scale(params: dict[str, Tensor], config: ModelConfig, rng) -> None:
    """Rescale the projection conv so encoder features come out near unit-ish std.

    Deep unnormalized conv stacks drift in scale; a probe image through the
    freshly initialized encoder measures the drift, and folding the
    correction into the 1x1 projection keeps the feature/position-code ratio
    stable across configurations (data-free, seed-deterministic).
    """
    probe = rng.uniform(0.0, 1.0, (3, config.input_size, config.input_size)).astype(np.float32)
    fmap = encode_image(params, config, probe)
    df, hf, wf = config.feature_map_shape()
    pe = config.pos_scale * positional_encoding(df, hf, wf)
    conv_part = fmap.data - pe.astype(fmap.data.dtype)
    std = float(conv_part.std())
    factor = FEATURE_STD_TARGET / max(std, 1e-6)
    params["enc.proj.w"].data *= factor


@functools.lru_cache(maxsize=8)
def positional_encoding(feature_dim: int, height: int, width: int) -> np.ndarray:
    """Fixed 2-d sinusoidal position code, shape [feature_dim, height, width]."""
    quarter = feature_dim // 4
    freqs = 1.0 / (10000.0 ** (np.arange(quarter) / max(quarter, 1)))
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    pe = np.empty((feature_dim, height, width), dtype=np.float64)
    for q in range(quarter):
        pe[4 * q + 0] = np.sin(xs * freqs[q])
        pe[4 * q + 1] = np.cos(xs * freqs[q])
        pe[4 * q + 2] = np.sin(ys * freqs[q])
        pe[4 * q + 3] = np.cos(ys * freqs[q])
    return pe


def encode_image(params: dict[str, Tensor], config: ModelConfig, image) -> Tensor:
    """Image [3, D, D] (or [N, 3, D, D]) -> feature map [df, Hf, Wf] with position code added."""
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image))
    d = config.input_size
    if x.data.shape[-3:] != (3, d, d):
        raise ad.ShapeError(f"expected image shape (3, {d}, {d}), got {x.data.shape}")
    h = ad.relu(ad.conv2d(x, params["enc.stem.w"], params["enc.stem.b"], pad=1))
    stage_outputs = []
    for i in range(len(config.channels)):
        h = ad.maxpool2x2(h)
        h = ad.relu(ad.conv2d(h, params[f"enc.s{i}.in.w"], params[f"enc.s{i}.in.b"], pad=1))
        for j in range(config.blocks_per_stage):
            r = ad.relu(ad.conv2d(h, params[f"enc.s{i}.b{j}.c1.w"], params[f"enc.s{i}.b{j}.c1.b"], pad=1))
            r = ad.conv2d(r, params[f"enc.s{i}.b{j}.c2.w"], params[f"enc.s{i}.b{j}.c2.b"], pad=1)
            h = ad.relu(ad.add(h, r))
        stage_outputs.append(h)
    fused = ad.concat([stage_outputs[-2], ad.upsample2x(stage_outputs[-1])], axis=-3)
    fmap = ad.conv2d(fused, params["enc.proj.w"], params["enc.proj.b"])
    df, hf, wf = config.feature_map_shape()
    pe = config.pos_scale * positional_encoding(df, hf, wf).astype(fmap.data.dtype)
    return ad.add(fmap, pe)


@dataclass
class FeatureCache:
    """Flattened attention keys and their precomputed projection, one per sequence."""

    keys: Tensor  # [M, df] or [B, M, df]
    proj: Tensor  # [M, da] or [B, M, da]


def make_feature_cache(params: dict[str, Tensor], fmap: Tensor) -> FeatureCache:
    keys = ad.spatial_flatten(fmap)
    return FeatureCache(keys=keys, proj=ad.linear(keys, params["attn.wk"]))


def init_decoder_state(config: ModelConfig, batch: int | None, dtype=np.float32) -> list[tuple[Tensor, Tensor]]:
    shape = (config.hidden_dim,) if batch is None else (batch, config.hidden_dim)
    return [
        (Tensor(np.zeros(shape, dtype=dtype)), Tensor(np.zeros(shape, dtype=dtype)))
        for _ in range(config.n_lstm_layers)
    ]


def decode_step(
    params: dict[str, Tensor],
    config: ModelConfig,
    prev_token,
    position: int,
    state: list[tuple[Tensor, Tensor]],
    cache: FeatureCache,
):
    """One decoder step: returns (logits, new_state, attention_weights).

    ``prev_token`` is an int (single sequence) or an int array [B]. The
    attention query is the previous top-layer hidden state.
    """
    if position >= config.max_seq_len:
        raise SequenceOverflowError(f"position {position} >= max_seq_len {config.max_seq_len}")
    ids = np.asarray(prev_token, dtype=np.intp)
    if np.any(ids < 0) or np.any(ids >= config.vocab.vocab_size):
        raise IndexError(f"token id out of range: {prev_token}")
    tok = ad.embedding(params["dec.tok_emb"], ids)
    dim = ad.embedding(params["dec.dim_emb"], dim_for_position(position))
    pos = ad.embedding(params["dec.pos_emb"], position)
    inp = ad.add(ad.add(tok, dim), pos)

    query = state[-1][0]
    ctx, attn = ad.attend(query, cache.proj, cache.keys, params["attn.wq"], params["attn.v"])
    x = ad.concat([inp, ctx], axis=-1)
    new_state = []
    for l in range(config.n_lstm_layers):
        h2, c2 = ad.lstm_cell(x, state[l][0], state[l][1], params[f"dec.l{l}.wx"], params[f"dec.l{l}.wh"], params[f"dec.l{l}.b"])
        new_state.append((h2, c2))
        x = h2
    logits = ad.linear(x, params["head.w"], params["head.b"])
    return logits, new_state, attn


def _padded_tokens(seqs: list[TokenSequence], max_seq_len: int):
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    t_max = int(lens.max())
    if t_max > max_seq_len:
        raise SequenceOverflowError(f"sequence length {t_max} exceeds max_seq_len {max_seq_len}")
    toks = np.zeros((len(seqs), t_max), dtype=np.intp)
    for b, s in enumerate(seqs):
        toks[b, : lens[b]] = s.tokens
    return toks, lens


def teacher_forced_loss(params, config: ModelConfig, images, seqs) -> Tensor:
    """Mean NLL over all predicted positions of a batch (or a single sample).

    ``images``: [3, D, D] with one TokenSequence, or [B, 3, D, D] with a list.
    """
    single = not isinstance(seqs, (list, tuple))
    if single:
        images = np.asarray(images)[None] if not isinstance(images, Tensor) else Tensor(images.data[None])
        seqs = [seqs]
    loss, _ = _teacher_forced_batch(params, config, images, seqs)
    return loss


def _teacher_forced_batch(params, config: ModelConfig, images, seqs: list[TokenSequence], want_accuracy: bool = False):
    toks, lens = _padded_tokens(seqs, config.max_seq_len)
    n_predicted = int((lens - 1).sum())
    fmap = encode_image(params, config, images)
    cache = make_feature_cache(params, fmap)
    state = init_decoder_state(config, batch=len(seqs), dtype=fmap.data.dtype)
    step_losses = []
    correct = 0
    for t in range(toks.shape[1] - 1):
        mask = (t + 1 < lens).astype(fmap.data.dtype)
        logits, state, _ = decode_step(params, config, toks[:, t], t, state, cache)
        targets = np.where(t + 1 < lens, toks[:, t + 1], 0)
        step_losses.append(ad.softmax_nll_batch(logits, targets, weights=mask, reduce="sum"))
        if want_accuracy:
            pred = logits.data.argmax(axis=-1)
            correct += int(((pred == targets) & (mask > 0)).sum())
    total = functools.reduce(ad.add, step_losses)
    loss = ad.scale(total, 1.0 / max(n_predicted, 1))
    return loss, {"n_predicted": n_predicted, "n_correct": correct}


def teacher_forced_stats(params, config: ModelConfig, samples_images, seqs, batch_size: int = 32):
    """(mean NLL, next-token accuracy) over a sample set, without recording a tape."""
    total_nll = 0.0
    total_pred = 0
    total_correct = 0
    for i in range(0, len(seqs), batch_size):
        imgs = np.stack([np.asarray(im) for im in samples_images[i : i + batch_size]])
        loss, stats = _teacher_forced_batch(params, config, imgs, seqs[i : i + batch_size], want_accuracy=True)
        total_nll += float(loss.data) * stats["n_predicted"]
        total_pred += stats["n_predicted"]
        total_correct += stats["n_correct"]
    return total_nll / max(total_pred, 1), total_correct / max(total_pred, 1)


@dataclass
class InferenceResult:
    """Greedy decoding outcome; ``ring`` is None when decoding failed."""

    sequence: TokenSequence
    ring: PolygonRing | None
    terminated: bool
    failure: str | None = field(default=None)

    @property
    def ok(self) -> bool:
        return self.ring is not None


def greedy_infer(params, config: ModelConfig, image, max_seq_len: int | None = None) -> InferenceResult:
    """Argmax decoding from <s> until </s> or the length cap; ties pick the smaller id."""
    vocab = config.vocab
    limit = config.max_seq_len if max_seq_len is None else min(max_seq_len, config.max_seq_len)
    fmap = encode_image(params, config, image)
    cache = make_feature_cache(params, fmap)
    state = init_decoder_state(config, batch=None, dtype=fmap.data.dtype)
    tokens = [vocab.start_id]
    terminated = False
    for position in range(limit - 1):
        logits, state, _ = decode_step(params, config, tokens[-1], position, state, cache)
        nxt = int(np.argmax(logits.data))
        tokens.append(nxt)
        if nxt == vocab.stop_id:
            terminated = True
            break
    seq = TokenSequence.from_tokens(tokens, vocab, terminated=terminated)
    try:
        ring = decode_tokens(seq, vocab)
        failure = None
    except TooFewVerticesError:
        ring, failure = None, "too-few-vertices"
    except MalformedSequenceError:
        ring, failure = None, "malformed-sequence"
    return InferenceResult(sequence=seq, ring=ring, terminated=terminated, failure=failure)
