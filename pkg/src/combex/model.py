"""Copy-constrained encoder-decoder in numpy.

Encoder: token embeddings and a bidirectional LSTM.  Decoder: a single
LSTM layer with additive attention.  At every step the output distribution
covers the schema's structural tokens (plus EOS) and the positions of the
input; positions holding the same token type are pooled, so the model
emits token types and can never produce anything outside the copy mask.
The decoder input is the previous token's embedding concatenated with the
mean encoder state over the input positions of that token (zero for
structural tokens).

All parameters are float64 and gradients are derived by hand so that they
can be checked against finite differences.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from combex.constraints import CopyMask, advance, copy_mask, copyable, next_allowed, start_state
from combex.corpus import Diagnostic, Instance, RelationSet, window
from combex.linearizer import Schema, delinearize, linearize, relabel
from combex.nn import lstm_step, lstm_step_backward, masked_logsumexp, masked_softmax
from combex.tokenizer import BOS, DRUG, EOS, NER, SEMI, Kind, Token, Vocab, build_vocab, special, tokenize

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# Every structural token the decoder can ever emit; a schema enables a subset.
OUTPUT_SPECIALS = (EOS, DRUG, SEMI, "@POS@", "@COMB@", "@NOCOMB@", "@NON-POS@", "@ANY-COMB@", NER)
_SPECIAL_INDEX = {s: k for k, s in enumerate(OUTPUT_SPECIALS)}


class VocabMismatch(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    encoder_lr: float = 2e-3
    decoder_lr: float = 2e-3
    epochs: int = 50
    seed: int = 0
    batch_size: int = 16
    clip_norm: float = 5.0
    n_ctx: int = 0
    max_steps: int = 128
    unk_dropout: float = 0.1

    def __post_init__(self):
        if self.embed_dim <= 0 or self.hidden_dim <= 0 or self.hidden_dim % 2:
            raise ValueError("embed_dim must be positive and hidden_dim positive and even")
        if self.encoder_lr <= 0 or self.decoder_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs <= 0 or self.batch_size <= 0 or self.max_steps <= 0:
            raise ValueError("epochs, batch_size and max_steps must be positive")
        if self.n_ctx < 0:
            raise ValueError("n_ctx must be non-negative")
        if not 0.0 <= self.unk_dropout < 1.0:
            raise ValueError("unk_dropout must lie in [0, 1)")


def param_shapes(cfg: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    e, d = cfg.embed_dim, cfg.hidden_dim
    he, h, a, k = d // 2, d, d, len(OUTPUT_SPECIALS)
    return {
        "enc_emb": (vocab_size, e),
        "enc_fw_W": (4 * he, e + he), "enc_fw_b": (4 * he,),
        "enc_bw_W": (4 * he, e + he), "enc_bw_b": (4 * he,),
        "dec_emb": (vocab_size, e),
        "init_W": (h, d), "init_b": (h,),
        "dec_W": (4 * h, e + d + h), "dec_b": (4 * h,),
        "att_Ws": (a, h), "att_Uh": (a, d), "att_v": (a,),
        "out_W": (h, h + d), "out_b": (h,),
        "spec_W": (k, h), "spec_b": (k,),
        "ptr_W": (d, h),
    }


def init_params(cfg: ModelConfig, vocab_size: int, rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg, vocab_size).items():
        if name.endswith("_b"):
            p = np.zeros(shape)
            if name in ("enc_fw_b", "enc_bw_b", "dec_b"):
                n = shape[0] // 4
                p[n:2 * n] = 1.0  # forget gate
        elif name.endswith("emb"):
            p = rng.normal(0.0, 0.1, size=shape)
        else:
            p = rng.uniform(-1.0, 1.0, size=shape) * math.sqrt(3.0 / shape[-1]) if len(shape) > 1 else rng.normal(0.0, 0.1, size=shape)
        params[name] = p
    return params


# -- examples and batches ---------------------------------------------------

@dataclass
class Example:
    """One (input, target) pair resolved against a vocabulary and schema."""

    input_ids: np.ndarray      # (T,)
    ptr_mask: np.ndarray       # (T,) positions that may be copied
    type_of: np.ndarray        # (T,) copy-type index or -1
    types: list[str]           # copy types, in first-occurrence order
    prev_ids: np.ndarray       # (L,) decoder input token ids
    prev_copy: np.ndarray      # (L, T) copy-feeding weights
    tgt_special: np.ndarray    # (L,) index into OUTPUT_SPECIALS or -1
    tgt_pos: np.ndarray        # (L, T) positions of the target copy type
    name: str = ""


def _input_layout(input_tokens: Sequence[Token], vocab: Vocab, schema: Schema):
    types = copyable(input_tokens, schema)
    tindex = {t: k for k, t in enumerate(types)}
    type_of = np.array([tindex.get(t.surface, -1) if t.kind is not Kind.SPECIAL else -1 for t in input_tokens], dtype=int)
    ids = np.array(vocab.ids(input_tokens), dtype=int)
    return ids, type_of >= 0, type_of, types


def make_example(input_tokens: Sequence[Token], target_tokens: Sequence[Token | str], vocab: Vocab, schema: Schema, name: str = "") -> Example:
    """Resolve a pair; a target word absent from the input is a corpus bug and raises."""
    ids, ptr_mask, type_of, types = _input_layout(input_tokens, vocab, schema)
    tindex = {t: k for k, t in enumerate(types)}
    structural = set(schema.specials) | {EOS}
    tgt = [str(t) for t in target_tokens]
    T, L = len(ids), len(tgt)
    tgt_special = np.full(L, -1, dtype=int)
    tgt_pos = np.zeros((L, T), dtype=bool)
    for k, s in enumerate(tgt):
        if s in structural:
            tgt_special[k] = _SPECIAL_INDEX[s]
        elif s in tindex:
            tgt_pos[k] = type_of == tindex[s]
        else:
            raise ValueError(f"target token {s!r} of instance {name or '?'} is outside the copy mask")
    prev = [BOS] + tgt[:-1]
    prev_ids = np.array(vocab.ids(prev), dtype=int)
    prev_copy = np.zeros((L, T))
    cursor = np.zeros(T, dtype=bool)
    for k, s in enumerate(prev):
        type_idx = tindex.get(s, -1) if s not in structural else -1
        cursor = _copy_feed(type_of, type_idx, cursor)
        if cursor.any():
            prev_copy[k] = cursor / cursor.sum()
    return Example(ids, ptr_mask, type_of, types, prev_ids, prev_copy, tgt_special, tgt_pos, name)


def _copy_feed(type_of: np.ndarray, type_idx: int, cursor: np.ndarray) -> np.ndarray:
    """Input positions a just-emitted token is read from.

    A copied type continues the previous span when it sits right after a
    position in ``cursor``; otherwise every position of that type is used.
    Structural tokens (``type_idx < 0``) reset the cursor.
    """
    if type_idx < 0:
        return np.zeros_like(cursor)
    sel = type_of == type_idx
    follow = sel & np.concatenate([[False], cursor[:-1]])
    return follow if follow.any() else sel


def instance_input(inst: Instance, n_ctx: int) -> list[Token]:
    return tokenize(window(inst, n_ctx))


def instance_target(inst: Instance, schema: Schema) -> list[Token]:
    return linearize(relabel(inst.gold, schema.mode), inst, schema)


def instance_example(inst: Instance, vocab: Vocab, schema: Schema, n_ctx: int) -> Example:
    return make_example(instance_input(inst, n_ctx), instance_target(inst, schema), vocab, schema, inst.doc_id)


@dataclass
class Batch:
    ids: np.ndarray         # (B, T)
    enc_mask: np.ndarray    # (B, T)
    ptr_mask: np.ndarray    # (B, T)
    prev_ids: np.ndarray    # (B, L)
    prev_copy: np.ndarray   # (B, L, T)
    tgt_special: np.ndarray  # (B, L)
    tgt_pos: np.ndarray     # (B, L, T)
    dec_mask: np.ndarray    # (B, L)
    spec_mask: np.ndarray   # (K,)


def spec_mask_for(schema: Schema) -> np.ndarray:
    allowed = set(schema.specials) | {EOS}
    return np.array([s in allowed for s in OUTPUT_SPECIALS])


def collate(examples: Sequence[Example], schema: Schema) -> Batch:
    B = len(examples)
    T = max(1, max(len(e.input_ids) for e in examples))
    L = max(len(e.prev_ids) for e in examples)
    ids = np.zeros((B, T), dtype=int)
    enc_mask = np.zeros((B, T), dtype=bool)
    ptr_mask = np.zeros((B, T), dtype=bool)
    prev_ids = np.zeros((B, L), dtype=int)
    prev_copy = np.zeros((B, L, T))
    tgt_special = np.full((B, L), -1, dtype=int)
    tgt_pos = np.zeros((B, L, T), dtype=bool)
    dec_mask = np.zeros((B, L), dtype=bool)
    for b, ex in enumerate(examples):
        t, n = len(ex.input_ids), len(ex.prev_ids)
        ids[b, :t] = ex.input_ids
        enc_mask[b, :t] = True
        ptr_mask[b, :t] = ex.ptr_mask
        prev_ids[b, :n] = ex.prev_ids
        prev_copy[b, :n, :t] = ex.prev_copy
        tgt_special[b, :n] = ex.tgt_special
        tgt_pos[b, :n, :t] = ex.tgt_pos
        dec_mask[b, :n] = True
    return Batch(ids, enc_mask, ptr_mask, prev_ids, prev_copy, tgt_special, tgt_pos, dec_mask, spec_mask_for(schema))


# -- network ----------------------------------------------------------------

def _encode(p, ids, enc_mask):
    B, T = ids.shape
    he = p["enc_fw_b"].shape[0] // 4
    X = p["enc_emb"][ids]
    m = enc_mask[:, :, None].astype(float)
    hf = np.zeros((B, he)); cf = np.zeros((B, he))
    hb = np.zeros((B, he)); cb = np.zeros((B, he))
    Hf = np.zeros((B, T, he)); Hb = np.zeros((B, T, he))
    fw_cache, bw_cache = [None] * T, [None] * T
    for t in range(T):
        hf, cf, fw_cache[t] = lstm_step(X[:, t], hf, cf, p["enc_fw_W"], p["enc_fw_b"], m[:, t])
        Hf[:, t] = hf
    for t in reversed(range(T)):
        hb, cb, bw_cache[t] = lstm_step(X[:, t], hb, cb, p["enc_bw_W"], p["enc_bw_b"], m[:, t])
        Hb[:, t] = hb
    H = np.concatenate([Hf, Hb], axis=2) * m
    return H, (X, m, fw_cache, bw_cache)


def _encode_backward(p, g, dH, ids, cache):
    X, m, fw_cache, bw_cache = cache
    B, T, d = dH.shape
    he = d // 2
    dH = dH * m
    dX = np.zeros_like(X)
    dh = np.zeros((B, he)); dc = np.zeros((B, he))
    for t in reversed(range(T)):
        dx, dh, dc = lstm_step_backward(dH[:, t, :he] + dh, dc, fw_cache[t], p["enc_fw_W"], g["enc_fw_W"], g["enc_fw_b"])
        dX[:, t] += dx
    dh = np.zeros((B, he)); dc = np.zeros((B, he))
    for t in range(T):
        dx, dh, dc = lstm_step_backward(dH[:, t, he:] + dh, dc, bw_cache[t], p["enc_bw_W"], g["enc_bw_W"], g["enc_bw_b"])
        dX[:, t] += dx
    np.add.at(g["enc_emb"], ids, dX)


def _init_state(p, H, enc_mask):
    lengths = np.maximum(enc_mask.sum(axis=1, keepdims=True), 1)
    mean_H = H.sum(axis=1) / lengths
    s0 = np.tanh(mean_H @ p["init_W"].T + p["init_b"])
    return s0, (mean_H, lengths)


def _decoder_step(p, H, UH, enc_mask, ptr_mask, spec_mask, prev_ids, prev_copy, s, c):
    """One decoder step; returns the output logits ``(B, K + T)`` and caches."""
    emb = p["dec_emb"][prev_ids]
    cv = np.einsum("bt,btd->bd", prev_copy, H)
    x = np.concatenate([emb, cv], axis=1)
    s, c, lcache = lstm_step(x, s, c, p["dec_W"], p["dec_b"])
    G = np.tanh(UH + (s @ p["att_Ws"].T)[:, None, :])
    alpha = masked_softmax(G @ p["att_v"], enc_mask)
    ctx = np.einsum("bt,btd->bd", alpha, H)
    so = np.concatenate([s, ctx], axis=1)
    o = np.tanh(so @ p["out_W"].T + p["out_b"])
    zs = o @ p["spec_W"].T + p["spec_b"]
    q = o @ p["ptr_W"].T
    P = np.einsum("bd,btd->bt", q, H)
    logits = np.concatenate([zs, P], axis=1)
    mask = np.concatenate([np.broadcast_to(spec_mask, zs.shape), ptr_mask], axis=1)
    cache = (prev_ids, prev_copy, s, lcache, G, alpha, so, o, q)
    return logits, mask, s, c, cache


def _decoder_step_backward(p, g, H, dlogits, ds, dc, cache, dH, dUH):
    prev_ids, prev_copy, s, lcache, G, alpha, so, o, q = cache
    K = p["spec_b"].shape[0]
    h = s.shape[1]
    dzs, dP = dlogits[:, :K], dlogits[:, K:]
    g["spec_W"] += dzs.T @ o
    g["spec_b"] += dzs.sum(axis=0)
    do = dzs @ p["spec_W"]
    dq = np.einsum("bt,btd->bd", dP, H)
    dH += dP[:, :, None] * q[:, None, :]
    g["ptr_W"] += dq.T @ o
    do += dq @ p["ptr_W"]
    dpre = do * (1.0 - o * o)
    g["out_W"] += dpre.T @ so
    g["out_b"] += dpre.sum(axis=0)
    dso = dpre @ p["out_W"]
    ds = ds + dso[:, :h]
    dctx = dso[:, h:]
    dalpha = np.einsum("bd,btd->bt", dctx, H)
    dH += alpha[:, :, None] * dctx[:, None, :]
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    g["att_v"] += np.einsum("bt,bta->a", de, G)
    dGp = de[:, :, None] * p["att_v"] * (1.0 - G * G)
    dUH += dGp
    dsw = dGp.sum(axis=1)
    g["att_Ws"] += dsw.T @ s
    ds = ds + dsw @ p["att_Ws"]
    dx, ds_prev, dc_prev = lstm_step_backward(ds, dc, lcache, p["dec_W"], g["dec_W"], g["dec_b"])
    e = p["dec_emb"].shape[1]
    np.add.at(g["dec_emb"], prev_ids, dx[:, :e])
    dH += prev_copy[:, :, None] * dx[:, None, e:]
    return ds_prev, dc_prev


def _target_mask(batch: Batch, t: int) -> np.ndarray:
    """Boolean ``(B, K + T)`` selecting the output slots of the gold token at step ``t``."""
    B = batch.ids.shape[0]
    K = len(OUTPUT_SPECIALS)
    sel = np.zeros((B, K + batch.ids.shape[1]), dtype=bool)
    spec = batch.tgt_special[:, t]
    rows = np.nonzero(spec >= 0)[0]
    sel[rows, spec[rows]] = True
    sel[:, K:] = batch.tgt_pos[:, t]
    return sel


def loss_and_grads(params: dict[str, np.ndarray], batch: Batch, need_grad: bool = True):
    """Mean negative log-likelihood per target token, and its gradient."""
    p = params
    H, enc_cache = _encode(p, batch.ids, batch.enc_mask)
    UH = H @ p["att_Uh"].T
    s, init_cache = _init_state(p, H, batch.enc_mask)
    c = np.zeros_like(s)
    L = batch.prev_ids.shape[1]
    n_tokens = batch.dec_mask.sum()
    total = 0.0
    caches, dlogits_all = [], []
    for t in range(L):
        logits, mask, s, c, cache = _decoder_step(
            p, H, UH, batch.enc_mask, batch.ptr_mask, batch.spec_mask,
            batch.prev_ids[:, t], batch.prev_copy[:, t], s, c)
        sel = _target_mask(batch, t)
        logz = masked_logsumexp(logits, mask)
        logp_gold = masked_logsumexp(logits, sel & mask)
        live = batch.dec_mask[:, t]
        total -= np.sum(np.where(live, logp_gold - logz, 0.0))
        if need_grad:
            probs = masked_softmax(logits, mask)
            gold = masked_softmax(logits, sel & mask)
            dlogits_all.append((probs - gold) * (live[:, None] / n_tokens))
            caches.append(cache)
    loss = total / n_tokens
    if not need_grad:
        return loss, None

    g = {k: np.zeros_like(v) for k, v in p.items()}
    dH = np.zeros_like(H)
    dUH = np.zeros_like(UH)
    ds = np.zeros_like(s)
    dc = np.zeros_like(s)
    for t in reversed(range(L)):
        ds, dc = _decoder_step_backward(p, g, H, dlogits_all[t], ds, dc, caches[t], dH, dUH)
    mean_H, lengths = init_cache
    s0 = np.tanh(mean_H @ p["init_W"].T + p["init_b"])
    dpre = ds * (1.0 - s0 * s0)
    g["init_W"] += dpre.T @ mean_H
    g["init_b"] += dpre.sum(axis=0)
    dmean = dpre @ p["init_W"]
    dH += (dmean / lengths)[:, None, :] * batch.enc_mask[:, :, None]
    g["att_Uh"] += np.einsum("bta,btd->ad", dUH, H)
    dH += dUH @ p["att_Uh"]
    _encode_backward(p, g, dH, batch.ids, enc_cache)
    return loss, g


# -- checkpoint ---------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocab
    schema: Schema
    params: dict[str, np.ndarray]
    step: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def vocab_hash(self) -> str:
        return self.vocab.digest()

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config": dataclasses.asdict(self.config),
            "vocab_hash": self.vocab_hash,
            "vocab": list(self.vocab.tokens),
            "schema": {"mode": self.schema.mode.value, "entity_sep": self.schema.entity_sep.value,
                       "ordering": self.schema.ordering.value},
            "step": self.step,
            "history": self.history,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
        }

    def save(self, path: str | Path) -> None:
        header = np.frombuffer(json.dumps(self.header()).encode("utf-8"), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, __header__=header, **{f"param/{k}": v for k, v in self.params.items()})

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["__header__"]).decode("utf-8"))
            if header.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint format {header.get('format_version')!r}")
            params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
        vocab = Vocab(tuple(header["vocab"]))
        if vocab.digest() != header["vocab_hash"]:
            raise VocabMismatch("checkpoint vocabulary does not match its recorded hash")
        cfg = ModelConfig(**header["config"])
        expected = param_shapes(cfg, len(vocab))
        for k, shape in expected.items():
            if k not in params or params[k].shape != tuple(shape):
                raise ValueError(f"parameter {k} missing or with wrong shape")
        return cls(cfg, vocab, Schema(**header["schema"]), params, header["step"], header["history"])

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.config, self.vocab, self.schema,
                          {k: v.copy() for k, v in self.params.items()}, self.step, list(self.history))


def forward_loss(pairs: Sequence[tuple[Sequence[Token], Sequence[Token | str]]], ckpt: Checkpoint) -> float:
    """Mean per-token cross-entropy of ``(input tokens, target tokens)`` pairs."""
    examples = [make_example(x, y, ckpt.vocab, ckpt.schema, name=f"pair {k}") for k, (x, y) in enumerate(pairs)]
    loss, _ = loss_and_grads(ckpt.params, collate(examples, ckpt.schema), need_grad=False)
    return float(loss)


# -- training -------------------------------------------------------------------

class _Adam:
    def __init__(self, params, lrs, b1=0.9, b2=0.999, eps=1e-8):
        self.lrs, self.b1, self.b2, self.eps = lrs, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, gk in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * gk
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * gk * gk
            params[k] -= self.lrs[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(v * v)) for v in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for v in grads.values():
            v *= scale
    return norm


def train(
    corpus: Sequence[Instance],
    schema: Schema,
    cfg: ModelConfig = ModelConfig(),
    vocab: Vocab | None = None,
    log_every: int = 0,
) -> Checkpoint:
    """Teacher-forced training; deterministic for a given ``cfg.seed``.

    Per-epoch mean losses are kept in ``Checkpoint.history``.  A non-finite
    loss raises :class:`TrainingDiverged` carrying the last finite state.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    vocab = vocab or build_vocab(corpus, cfg.n_ctx)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, len(vocab), rng)
    ckpt = Checkpoint(cfg, vocab, schema, params)
    examples = [instance_example(inst, vocab, schema, cfg.n_ctx) for inst in corpus]
    lrs = {k: cfg.encoder_lr if k.startswith("enc_") else cfg.decoder_lr for k in params}
    opt = _Adam(params, lrs)
    last_good = ckpt.copy()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        weighted, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [examples[i] for i in order[start:start + cfg.batch_size]]
            batch = collate(chunk, schema)
            if cfg.unk_dropout:
                # Encoder-side word dropout; copy types still come from the surfaces.
                drop = batch.ptr_mask & (rng.random(batch.ids.shape) < cfg.unk_dropout)
                batch.ids = np.where(drop, vocab.unk_id, batch.ids)
            loss, grads = loss_and_grads(params, batch)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(v)) for v in grads.values()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {ckpt.step}", last_good)
            clip_grads(grads, cfg.clip_norm)
            opt.update(params, grads)
            ckpt.step += 1
            n = int(batch.dec_mask.sum())
            weighted += float(loss) * n
            count += n
        ckpt.history.append(weighted / count)
        last_good = ckpt.copy()
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d loss %.5f", epoch + 1, ckpt.history[-1])
    return ckpt


# -- decoding -------------------------------------------------------------------

@dataclass
class DecodeOutput:
    tokens: list[Token]
    candidates: list[str]                 # output types, in distribution order
    distributions: list[np.ndarray] = field(default_factory=list)
    logprobs: list[float] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    mask: CopyMask | None = None

    @property
    def text(self) -> str:
        return " ".join(t.surface for t in self.tokens if t.surface != EOS)


def greedy_decode(ckpt: Checkpoint, input_tokens: Sequence[Token], schema: Schema | None = None,
                  strict: bool = False, max_steps: int | None = None) -> DecodeOutput:
    """Greedy decoding under the copy mask (and the grammar when ``strict``)."""
    schema = schema or ckpt.schema
    max_steps = max_steps or ckpt.config.max_steps
    p, vocab = ckpt.params, ckpt.vocab
    ids, ptr_mask, type_of, types = _input_layout(input_tokens, vocab, schema)
    mask = copy_mask(input_tokens, schema)
    spec_mask = spec_mask_for(schema)
    K = len(OUTPUT_SPECIALS)
    T = max(1, len(ids))
    ids_b = np.zeros((1, T), dtype=int); ids_b[0, :len(ids)] = ids
    enc_mask = np.zeros((1, T), dtype=bool); enc_mask[0, :len(ids)] = True
    ptr_b = np.zeros((1, T), dtype=bool); ptr_b[0, :len(ids)] = ptr_mask
    H, _ = _encode(p, ids_b, enc_mask)
    UH = H @ p["att_Uh"].T
    s, _ = _init_state(p, H, enc_mask)
    c = np.zeros_like(s)

    spec_ids = [k for k in range(K) if spec_mask[k]]
    candidates = [OUTPUT_SPECIALS[k] for k in spec_ids] + types
    # pool matrix: output slots (K + T) -> candidate types
    pool = np.zeros((K + T, len(candidates)))
    for j, k in enumerate(spec_ids):
        pool[k, j] = 1.0
    for t in range(len(ids)):
        if type_of[t] >= 0:
            pool[K + t, len(spec_ids) + type_of[t]] = 1.0

    out = DecodeOutput([], candidates, mask=mask)
    prev_id = np.array([vocab.id(BOS)])
    prev_copy = np.zeros((1, T))
    cursor = np.zeros(len(ids), dtype=bool)
    gs = start_state(schema)
    for _ in range(max_steps):
        logits, slot_mask, s, c, _ = _decoder_step(p, H, UH, enc_mask, ptr_b, spec_mask, prev_id, prev_copy, s, c)
        probs = masked_softmax(logits, slot_mask)[0] @ pool
        if strict:
            legal = next_allowed(gs, mask, schema, strict=True)
            keep = np.array([cand in legal for cand in candidates])
            probs = np.where(keep, probs, 0.0)
            probs = probs / probs.sum()
        j = int(np.argmax(probs))
        surface = candidates[j]
        if surface not in mask:
            raise AssertionError(f"decoder emitted {surface!r} outside the copy mask")
        out.distributions.append(probs)
        out.logprobs.append(float(np.log(probs[j])))
        is_special = j < len(spec_ids)
        out.tokens.append(special(surface) if is_special else Token(surface, Kind.WORD))
        cursor = _copy_feed(type_of, -1 if is_special else j - len(spec_ids), cursor)
        prev_copy = np.zeros((1, T))
        if cursor.any():
            prev_copy[0, :len(ids)] = cursor / cursor.sum()
        prev_id = np.array([vocab.id(surface)])
        if strict:
            gs = advance(gs, surface, schema) or gs
        if surface == EOS:
            break
    return out


def predict(inst: Instance, ckpt: Checkpoint, schema: Schema | None = None, strict: bool = False,
            vocab: Vocab | None = None, max_steps: int | None = None) -> tuple[RelationSet, DecodeOutput]:
    """Decode one instance and parse the output into a relation set.

    Diagnostics from parsing are kept on the returned :class:`DecodeOutput`.
    """
    if vocab is not None and vocab.digest() != ckpt.vocab_hash:
        raise VocabMismatch("vocabulary does not match the checkpoint")
    schema = schema or ckpt.schema
    out = greedy_decode(ckpt, instance_input(inst, ckpt.config.n_ctx), schema, strict, max_steps)
    rels, diags = delinearize(out.tokens, inst, schema)
    out.diagnostics = diags
    return rels, out


# -- gradient check -------------------------------------------------------------

def probe_batch(instances: Sequence[Instance], schema: Schema, cfg: ModelConfig, vocab: Vocab | None = None):
    vocab = vocab or build_vocab(instances, cfg.n_ctx)
    return vocab, collate([instance_example(i, vocab, schema, cfg.n_ctx) for i in instances], schema)


def grad_check(params: dict[str, np.ndarray], batch: Batch, n_samples: int = 200, eps: float = 1e-5,
               seed: int = 0, floor: float = 1e-5) -> tuple[float, list[tuple[str, tuple, float, float]]]:
    """Compare analytic gradients with central differences at sampled coordinates.

    Coordinates are drawn uniformly over all parameters (each tensor gets
    at least one).  Returns the maximum relative error
    ``|a - n| / max(|a|, |n|, floor)`` and the per-coordinate records.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads(params, batch)
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    picks = [(k, int(rng.integers(params[k].size))) for k in names]
    flat = rng.choice(sizes.sum(), size=max(0, n_samples - len(picks)), replace=False)
    offsets = np.cumsum(sizes) - sizes
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        picks.append((names[i], int(f - offsets[i])))
    worst = 0.0
    records = []
    for name, flat_idx in picks:
        arr = params[name]
        idx = np.unravel_index(flat_idx, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + eps
        up, _ = loss_and_grads(params, batch, need_grad=False)
        arr[idx] = orig - eps
        down, _ = loss_and_grads(params, batch, need_grad=False)
        arr[idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = grads[name][idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, rel)
        records.append((name, idx, float(analytic), float(numeric)))
    return worst, records
