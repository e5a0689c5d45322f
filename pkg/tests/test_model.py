import math

import numpy as np
import pytest

from combex.constraints import copy_mask, copyable
from combex.corpus import window
from combex.linearizer import Mode, Schema, linearize
from combex.model import (
    OUTPUT_SPECIALS, Checkpoint, ModelConfig, TrainingDiverged, VocabMismatch, forward_loss, grad_check,
    greedy_decode, init_params, instance_input, predict, probe_batch, train,
)
from combex.synthgen import SynthConfig, generate
from combex.tokenizer import BOS, EOS, build_vocab, tokenize
from conftest import APALUTAMIDE, DEXAMETHASONE, DOCETAXEL, NIFE, WORKED_INSTANCES, SORAFENIB

THREE = Schema(Mode.THREE_WAY)
TINY = ModelConfig(embed_dim=8, hidden_dim=10, seed=1)


def tiny_checkpoint(instances, schema=THREE, cfg=TINY, seed=0):
    vocab = build_vocab(instances)
    return Checkpoint(cfg, vocab, schema, init_params(cfg, len(vocab), np.random.default_rng(seed)))


# -- independent likelihood oracle --------------------------------------------

def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm(W, b, x, h, c):
    n = h.size
    z = W @ np.concatenate([x, h]) + b
    i, f, o, g = _sig(z[:n]), _sig(z[n:2 * n]), _sig(z[2 * n:3 * n]), np.tanh(z[3 * n:])
    c = f * c + i * g
    return o * np.tanh(c), c


def oracle_log_likelihood(p, vocab, schema, inp, tgt):
    """Sum of log-probabilities of ``tgt`` given ``inp``, one position at a time."""
    inp_s = [t.surface for t in inp]
    tgt_s = [t if isinstance(t, str) else t.surface for t in tgt]
    types = copyable(inp, schema)
    is_copy = [s in types and t.kind.name != "SPECIAL" for s, t in zip(inp_s, inp)]
    T = len(inp_s)
    he = p["enc_fw_b"].size // 4
    hf, cf, fw = np.zeros(he), np.zeros(he), []
    for t in range(T):
        hf, cf = _lstm(p["enc_fw_W"], p["enc_fw_b"], p["enc_emb"][vocab.id(inp_s[t])], hf, cf)
        fw.append(hf)
    hb, cb, bw = np.zeros(he), np.zeros(he), [None] * T
    for t in reversed(range(T)):
        hb, cb = _lstm(p["enc_bw_W"], p["enc_bw_b"], p["enc_emb"][vocab.id(inp_s[t])], hb, cb)
        bw[t] = hb
    H = [np.concatenate([fw[t], bw[t]]) for t in range(T)]
    s = np.tanh(p["init_W"] @ (sum(H) / T) + p["init_b"])
    c = np.zeros_like(s)
    allowed_specials = [k for k, tok in enumerate(OUTPUT_SPECIALS) if tok in set(schema.specials) | {EOS}]
    structural = set(schema.specials) | {EOS}
    total = 0.0
    prev, cursor = BOS, set()
    for gold in tgt_s:
        # positions the previous token was read from
        if prev in structural or prev == BOS:
            cursor = set()
        else:
            same = {t for t in range(T) if inp_s[t] == prev and is_copy[t]}
            follow = {t for t in same if t - 1 in cursor}
            cursor = follow or same
        feed = sum((H[t] for t in cursor), np.zeros(len(H[0]))) / max(len(cursor), 1)
        x = np.concatenate([p["dec_emb"][vocab.id(prev)], feed])
        s, c = _lstm(p["dec_W"], p["dec_b"], x, s, c)
        e = [p["att_v"] @ np.tanh(p["att_Uh"] @ H[t] + p["att_Ws"] @ s) for t in range(T)]
        w = [math.exp(v - max(e)) for v in e]
        ctx = sum(wt * h for wt, h in zip(w, H)) / sum(w)
        o = np.tanh(p["out_W"] @ np.concatenate([s, ctx]) + p["out_b"])
        scores = {}
        for k in allowed_specials:
            scores[("spec", k)] = p["spec_W"][k] @ o + p["spec_b"][k]
        for t in range(T):
            if is_copy[t]:
                scores[("pos", t)] = (p["ptr_W"] @ o) @ H[t]
        top = max(scores.values())
        z = sum(math.exp(v - top) for v in scores.values())
        if gold in structural:
            mass = math.exp(scores[("spec", OUTPUT_SPECIALS.index(gold))] - top)
        else:
            mass = sum(math.exp(scores[("pos", t)] - top) for t in range(T) if is_copy[t] and inp_s[t] == gold)
        total += math.log(mass / z)
        prev = gold
    return total, len(tgt_s)


def test_forward_loss_matches_oracle():
    insts = [SORAFENIB, NIFE]
    ckpt = tiny_checkpoint(insts)
    pairs = [(instance_input(i, 0), linearize(i.gold, i, THREE)) for i in insts]
    loss = forward_loss(pairs, ckpt)
    ll, n = 0.0, 0
    for x, y in pairs:
        a, b = oracle_log_likelihood(ckpt.params, ckpt.vocab, THREE, x, y)
        ll, n = ll + a, n + b
    assert loss >= 0
    assert abs(loss - (-ll / n)) < 1e-10


def test_forward_loss_uniform_is_log_k():
    ckpt = tiny_checkpoint([SORAFENIB])
    for k in ckpt.params:
        ckpt.params[k] = np.zeros_like(ckpt.params[k])
    x = instance_input(SORAFENIB, 0)
    y = linearize(SORAFENIB.gold, SORAFENIB, THREE)
    # zero weights give equal logits over every allowed output slot
    n_slots = len(set(THREE.specials) | {EOS}) + sum(1 for t in x if t.surface in copyable(x, THREE))
    assert forward_loss([(x, y)], ckpt) == pytest.approx(math.log(n_slots), abs=1e-12)


def test_target_outside_mask_names_instance():
    ckpt = tiny_checkpoint([SORAFENIB])
    with pytest.raises(ValueError, match="aspirin"):
        forward_loss([(instance_input(SORAFENIB, 0), tokenize("aspirin @DRUG@ curcumin @DRUG@ @POS@"))], ckpt)


# -- training ------------------------------------------------------------------

def test_overfit_single_instance():
    cfg = ModelConfig(embed_dim=16, hidden_dim=32, epochs=200, batch_size=1, unk_dropout=0.0, seed=0)
    ckpt = train([APALUTAMIDE], THREE, cfg)
    assert ckpt.step == 200
    assert ckpt.history[-1] < 0.01
    rels, out = predict(APALUTAMIDE, ckpt)
    assert rels == APALUTAMIDE.gold
    assert out.diagnostics == []
    # after warmup, each 20-step window ends no higher than it started
    h = ckpt.history[50:]
    assert all(h[k + 20] <= h[k] for k in range(0, len(h) - 20, 20))


def test_training_is_deterministic():
    cfg = ModelConfig(embed_dim=8, hidden_dim=8, epochs=2, batch_size=2, seed=3)
    a = train(WORKED_INSTANCES, THREE, cfg)
    b = train(WORKED_INSTANCES, THREE, cfg)
    c = train(WORKED_INSTANCES, THREE, ModelConfig(embed_dim=8, hidden_dim=8, epochs=2, batch_size=2, seed=4))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.history == b.history
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_divergence_is_reported(monkeypatch):
    from combex import model
    real = model.loss_and_grads
    calls = []

    def flaky(params, batch, need_grad=True):
        calls.append(1)
        loss, grads = real(params, batch, need_grad)
        return (float("nan") if len(calls) > 4 else loss), grads

    monkeypatch.setattr(model, "loss_and_grads", flaky)
    cfg = ModelConfig(embed_dim=8, hidden_dim=8, epochs=5, batch_size=2)
    with pytest.raises(TrainingDiverged) as info:
        train(WORKED_INSTANCES, THREE, cfg)
    last = info.value.checkpoint
    # three steps per epoch: the failure is in epoch 2, so epoch 1 survives
    assert last.step == 3 and len(last.history) == 1
    assert all(np.all(np.isfinite(v)) for v in last.params.values())


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        train([], THREE, TINY)


# -- checkpoint ----------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    cfg = ModelConfig(embed_dim=8, hidden_dim=8, epochs=2, batch_size=3)
    ckpt = train(WORKED_INSTANCES, THREE, cfg)
    path = tmp_path / "model.npz"
    ckpt.save(path)
    again = Checkpoint.load(path)
    assert again.config == ckpt.config and again.schema == ckpt.schema
    assert again.vocab_hash == ckpt.vocab_hash and again.step == ckpt.step
    assert again.history == ckpt.history
    for k in ckpt.params:
        assert np.array_equal(again.params[k], ckpt.params[k])
    for inst in WORKED_INSTANCES:
        r1, o1 = predict(inst, ckpt)
        r2, o2 = predict(inst, again)
        assert r1 == r2 and o1.text == o2.text and o1.logprobs == o2.logprobs


def test_vocab_mismatch():
    ckpt = tiny_checkpoint(WORKED_INSTANCES)
    other = build_vocab(["entirely different words"])
    with pytest.raises(VocabMismatch):
        predict(SORAFENIB, ckpt, vocab=other)


def test_corrupt_vocab_hash(tmp_path):
    ckpt = tiny_checkpoint(WORKED_INSTANCES)
    path = tmp_path / "m.npz"
    ckpt.save(path)
    # swap two vocabulary entries inside the stored header
    import json
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    header = json.loads(bytes(arrays["__header__"]).decode())
    header["vocab"][-1], header["vocab"][-2] = header["vocab"][-2], header["vocab"][-1]
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    with pytest.raises(VocabMismatch):
        Checkpoint.load(path)


# -- decoding ------------------------------------------------------------------

@pytest.mark.parametrize("strict", [False, True])
@pytest.mark.parametrize("mode", list(Mode))
def test_random_model_respects_mask(mode, strict):
    schema = Schema(mode)
    train_set, _ = generate(SynthConfig(n_train=20, n_test=1, seed=9))
    for seed in range(3):
        ckpt = tiny_checkpoint(train_set, schema, seed=seed)
        for inst in train_set[:10]:
            x = instance_input(inst, 0)
            out = greedy_decode(ckpt, x, schema, strict=strict, max_steps=40)
            mask = copy_mask(x, schema)
            assert all(t.surface in mask for t in out.tokens)
            for dist in out.distributions:
                assert np.all(dist >= 0) and abs(dist.sum() - 1.0) < 1e-6
            assert out.tokens[-1].surface == EOS or len(out.tokens) == 40


def test_oov_input_decodes():
    ckpt = tiny_checkpoint([SORAFENIB])
    rels, out = predict(DEXAMETHASONE, ckpt, max_steps=20)
    mask = copy_mask(window(DEXAMETHASONE, 0), THREE)
    assert all(t.surface in mask for t in out.tokens)


def test_step_cap_truncates():
    ckpt = tiny_checkpoint(WORKED_INSTANCES)
    _, out = predict(DOCETAXEL, ckpt, max_steps=3)
    assert len(out.tokens) <= 3


def test_strict_output_is_grammatical():
    from combex.constraints import validate_sequence
    ckpt = tiny_checkpoint(WORKED_INSTANCES, seed=5)
    for inst in WORKED_INSTANCES:
        x = instance_input(inst, 0)
        out = greedy_decode(ckpt, x, THREE, strict=True, max_steps=60)
        if out.tokens[-1].surface == EOS:
            diags = validate_sequence(out.tokens, x, THREE)
            assert [d.code for d in diags if d.code != "EmptyOutput"] == []


# -- gradients -----------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1])
@pytest.mark.parametrize("mode", [Mode.THREE_WAY, Mode.NER_EXTENDED])
def test_grad_check(mode, seed):
    train_set, _ = generate(SynthConfig(n_train=4, n_test=1, seed=seed))
    schema = Schema(mode)
    vocab, batch = probe_batch(train_set[:3], schema, TINY)
    params = init_params(TINY, len(vocab), np.random.default_rng(seed))
    worst, records = grad_check(params, batch, n_samples=200, seed=seed)
    assert len(records) >= 200
    assert worst < 1e-4


def test_near_saturated_gradients_are_finite():
    from combex.model import loss_and_grads
    vocab, batch = probe_batch([SORAFENIB], THREE, TINY)
    params = init_params(TINY, len(vocab))
    params["spec_b"][:] = 0.0
    params["spec_b"][OUTPUT_SPECIALS.index("@POS@")] = 60.0
    loss, grads = loss_and_grads(params, batch)
    assert np.isfinite(loss)
    assert all(np.all(np.isfinite(g)) for g in grads.values())
