from dataclasses import replace

import numpy as np
import pytest
import torch

from unitts.errors import InvalidInputError, UnknownSymbolError
from unitts.tts import (
    AttentionState,
    Example,
    SymbolTable,
    Trainer,
    TtsConfig,
    collate,
    finetune,
    forward_teacher_forced,
    infer,
    load_model,
    lsa_attention_step,
    new_model,
    parameter_groups,
    save_model,
    swap_symbol_table,
    train,
    tts_loss,
)

N_MELS = 8


def small_config(**kw):
    base = dict(n_mels=N_MELS, reduction=2, embed_dim=8, encoder_dim=8, prenet_dim=8, attention_rnn_dim=12,
                decoder_rnn_dim=12, attention_dim=6, location_filters=3, location_kernel=5, postnet_dim=8,
                postnet_kernel=3, speaker_dim=4, batch_size=2, max_steps=50)
    base.update(kw)
    return TtsConfig(**base)


def examples(table, n=4, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        syms = [str(x) for x in rng.integers(0, 5, rng.integers(3, 7))]
        t = int(rng.integers(6, 12))
        mel = np.cumsum(rng.standard_normal((t, N_MELS)) * 0.3, axis=0)
        out.append(Example(f"e{i}", table.encode(syms), mel, i % 2))
    return out


@pytest.fixture
def table():
    return SymbolTable.for_units(5)


class TestSymbolTable:
    def test_reserved_indices(self, table):
        assert table.vocab[:2] == ["<pad>", "<eos>"]
        assert table.encode([0, 4]) == [2, 6, 1]

    def test_unknown(self, table):
        with pytest.raises(UnknownSymbolError):
            table.encode([9])

    def test_digest_depends_on_order(self):
        a = SymbolTable.build("phoneme", ["a", "b"])
        b = SymbolTable.build("phoneme", ["b", "a"])
        assert a.digest() != b.digest()


class TestAttention:
    def setup_method(self):
        torch.manual_seed(0)
        self.model = new_model(small_config(), SymbolTable.for_units(5), ["a"]).double()
        self.att = self.model.attention
        self.L = 7
        self.memory = torch.randn(self.L, 8, dtype=torch.float64)
        self.query = torch.randn(12, dtype=torch.float64)

    def test_alignment_is_distribution(self):
        state = AttentionState.initial(1, self.L, torch.float64)
        state = AttentionState(state.alignment[0], state.cumulative[0])
        ctx, new = lsa_attention_step(self.att, self.query, self.memory, state)
        assert ctx.shape == (8,)
        assert torch.all(new.alignment >= 0)
        assert float(new.alignment.sum().detach()) == pytest.approx(1.0, abs=1e-12)
        torch.testing.assert_close(new.cumulative, state.cumulative + new.alignment)

    def test_zero_v_gives_uniform(self):
        with torch.no_grad():
            self.att.v.weight.zero_()
        state = AttentionState(torch.rand(self.L, dtype=torch.float64), torch.rand(self.L, dtype=torch.float64))
        _, new = lsa_attention_step(self.att, self.query, self.memory, state)
        torch.testing.assert_close(new.alignment, torch.full((self.L,), 1.0 / self.L, dtype=torch.float64))

    def test_location_conv_matches_loop(self):
        rng = np.random.default_rng(0)
        a, c = rng.random(self.L), rng.random(self.L)
        state = AttentionState(torch.tensor(a)[None], torch.tensor(c)[None])
        got = self.att.location_features(state)[0].detach().numpy()
        w = self.att.location_conv.weight.detach().numpy()  # (filters, 2, k)
        k = w.shape[2]
        half = k // 2
        chans = [a, c]
        expected = np.zeros((self.L, w.shape[0]))
        for t in range(self.L):
            for f in range(w.shape[0]):
                for ch in range(2):
                    for j in range(k):
                        src = t + j - half
                        if 0 <= src < self.L:
                            expected[t, f] += w[f, ch, j] * chans[ch][src]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_length_mismatch(self):
        state = AttentionState(torch.zeros(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))
        with pytest.raises(InvalidInputError):
            lsa_attention_step(self.att, self.query, self.memory, state)

    def test_empty_memory(self):
        state = AttentionState(torch.zeros(0), torch.zeros(0))
        with pytest.raises(InvalidInputError):
            lsa_attention_step(self.att, self.query, torch.zeros(0, 8, dtype=torch.float64), state)


def test_finite_difference_gradient(table):
    model = new_model(small_config(prenet_dropout=0.0), table, ["a", "b"]).double()
    batch = collate(examples(table, 2), model)
    params = dict(model.named_parameters())
    loss, _ = tts_loss(model, batch)
    names = ["attention.v.weight", "attention.location_conv.weight", "embedding.weight", "postnet.0.weight",
             "stop_proj.bias", "speaker_table.weight"]
    grads = torch.autograd.grad(loss, [params[n] for n in names])
    rng = np.random.default_rng(0)
    eps = 1e-6
    for name, g in zip(names, grads):
        p = params[name]
        flat = p.data.view(-1)
        for i in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
            old = flat[i].item()
            flat[i] = old + eps
            lp = tts_loss(model, batch)[0].item()
            flat[i] = old - eps
            lm = tts_loss(model, batch)[0].item()
            flat[i] = old
            fd = (lp - lm) / (2 * eps)
            an = g.view(-1)[i].item()
            assert abs(fd - an) <= 1e-3 * max(1.0, abs(fd)), (name, fd, an)


def test_teacher_forced_shapes(table):
    model = new_model(small_config(reduction=3), table, ["a"])
    ex = examples(table, 1)[0]
    mel, stops, align = forward_teacher_forced(model, ex.ids, ex.mel)
    t = ex.mel.shape[0]
    assert mel.shape == (t, N_MELS)
    assert stops.shape == (-(-t // 3),)
    assert align.shape == (-(-t // 3), len(ex.ids))


def test_teacher_forced_unknown_id(table):
    model = new_model(small_config(), table, ["a"])
    with pytest.raises(UnknownSymbolError):
        forward_teacher_forced(model, [99, 1], np.zeros((4, N_MELS)))


class TestInference:
    def test_forced_stop_gives_one_step(self, table):
        model = new_model(small_config(reduction=3), table, ["a"])
        with torch.no_grad():
            model.stop_proj.bias.fill_(1e4)
        res = infer(model, table.encode([1, 2]))
        assert res.stop_reason == "stop" and res.mel.frames.shape == (3, N_MELS)

    def test_max_steps(self, table):
        model = new_model(small_config(reduction=2), table, ["a"])
        with torch.no_grad():
            model.stop_proj.bias.fill_(-1e4)
        res = infer(model, table.encode([1, 2]), max_steps=10)
        assert res.stop_reason == "max_steps" and res.mel.frames.shape == (20, N_MELS)
        assert res.alignment.shape == (10, 3)

    def test_seeded_dropout_is_reproducible(self, table):
        model = new_model(small_config(), table, ["a"])
        a = infer(model, table.encode([1, 2, 3]), max_steps=5, seed=4).mel.frames
        b = infer(model, table.encode([1, 2, 3]), max_steps=5, seed=4).mel.frames
        c = infer(model, table.encode([1, 2, 3]), max_steps=5, seed=5).mel.frames
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_empty_and_unknown(self, table):
        model = new_model(small_config(), table, ["a"])
        with pytest.raises(InvalidInputError):
            infer(model, [])
        with pytest.raises(UnknownSymbolError):
            infer(model, [1, 50])


def test_overfits_single_batch(table):
    model = new_model(small_config(batch_size=2, lr=3e-3, prenet_dropout=0.0, seed=1), table, ["a", "b"])
    ex = examples(table, 2, seed=3)
    tr = train(model, ex, steps=500)
    first, last = tr.history[0]["total"], np.mean([h["total"] for h in tr.history[-10:]])
    assert last < 0.5 * first


def test_resume_is_bit_exact(table, tmp_path):
    ex = examples(table, 6)
    cfg = small_config(batch_size=2)
    straight = train(new_model(cfg, table, ["a", "b"]), ex, steps=6)
    first = train(new_model(cfg, table, ["a", "b"]), ex, steps=3)
    first.save(tmp_path / "ck")
    resumed = Trainer.load(tmp_path / "ck", ex)
    assert resumed.step == 3
    resumed.run(3)
    for k, v in parameter_groups(straight.model).items():
        assert np.array_equal(v, parameter_groups(resumed.model)[k]), k


def test_trainer_rejects_foreign_symbols(table):
    model = new_model(small_config(), table, ["a"])
    with pytest.raises(UnknownSymbolError):
        Trainer(model, [Example("x", [2, 40, 1], np.zeros((4, N_MELS)))])


class TestSwap:
    def test_only_embedding_and_speaker_change(self, table):
        pre = new_model(small_config(), table, ["a", "b"])
        phones = SymbolTable.build("phoneme", list("abcdefg"))
        new = swap_symbol_table(pre, phones)
        before, after = parameter_groups(pre), parameter_groups(new)
        changed = {k for k in before if before[k].shape != after[k].shape or not np.array_equal(before[k], after[k])}
        assert changed == {"embedding.weight", "speaker_table.weight"}
        assert after["embedding.weight"].shape == (len(phones), 8)
        assert after["speaker_table.weight"].shape == (1, 4)

    def test_keep_speaker_table(self, table):
        pre = new_model(small_config(), table, ["a", "b"])
        new = swap_symbol_table(pre, SymbolTable.build("phoneme", ["a"]), fresh_speaker=False)
        assert np.array_equal(parameter_groups(new)["speaker_table.weight"], parameter_groups(pre)["speaker_table.weight"])

    def test_finetune_rejects_unit_table(self, table):
        pre = new_model(small_config(), table, ["a"])
        with pytest.raises(InvalidInputError):
            finetune(pre, table, examples(table), steps=1)

    def test_finetune_runs(self, table):
        pre = new_model(small_config(), table, ["a"])
        phones = SymbolTable.build("phoneme", list("abc"))
        ex = [Example("p", phones.encode(list("abca")), np.zeros((6, N_MELS)), 0)]
        tr = finetune(pre, phones, ex, steps=2)
        assert tr.phase == "finetune" and tr.step == 2
        assert tr.model.symbol_table is phones

    def test_finetune_overrides_guided_attention(self, table):
        pre = new_model(replace(small_config(), guided_attention=1.0), table, ["a"])
        phones = SymbolTable.build("phoneme", list("abc"))
        ex = [Example("p", phones.encode(list("abca")), np.zeros((6, N_MELS)), 0)]
        assert finetune(pre, phones, ex, steps=1).model.config.guided_attention == 1.0
        assert finetune(pre, phones, ex, steps=1, guided_attention=0.0).model.config.guided_attention == 0.0
        assert pre.config.guided_attention == 1.0


def test_checkpoint_round_trip(table, tmp_path):
    model = new_model(small_config(), table, ["a"])
    save_model(tmp_path / "m", model, "pretrain", 7, {"seed": 0})
    loaded, meta = load_model(tmp_path / "m")
    assert meta["phase"] == "pretrain" and meta["step"] == 7 and meta["vocab_hash"] == table.digest()
    for k, v in parameter_groups(model).items():
        assert np.array_equal(v, parameter_groups(loaded)[k])
