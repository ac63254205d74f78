"""Tacotron-style acoustic model with location-sensitive attention.

The input symbol table is swappable: a model pre-trained on discovered units
is fine-tuned on phonemes by replacing only ``embedding`` (and optionally the
speaker table) while every other parameter is carried over.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import InvalidInputError, UnknownSymbolError
from .io import load_checkpoint, save_checkpoint
from .signal import FrameConfig, MelSpectrogram, Waveform, griffin_lim, mel_filterbank

log = logging.getLogger(__name__)

PAD = "<pad>"
EOS = "<eos>"
SYMBOL_KINDS = ("unit", "phoneme", "grapheme")


@dataclass
class TtsConfig:
    n_mels: int = 80
    reduction: int = 2
    embed_dim: int = 128
    encoder_kernel: int = 5
    encoder_layers: int = 2
    encoder_dim: int = 128
    prenet_dim: int = 128
    prenet_dropout: float = 0.5
    attention_rnn_dim: int = 256
    decoder_rnn_dim: int = 256
    attention_dim: int = 128
    location_filters: int = 16
    location_kernel: int = 15
    postnet_dim: int = 128
    postnet_layers: int = 3
    postnet_kernel: int = 5
    speaker_dim: int = 16
    use_speaker: bool = True
    stop_threshold: float = 0.5
    stop_pos_weight: float = 5.0
    # weight of the diagonal attention prior; 0 disables it
    guided_attention: float = 0.0
    guided_sigma: float = 0.2
    max_steps: int = 400
    lr: float = 1e-3
    grad_clip: float = 1.0
    batch_size: int = 16
    steps: int = 1000
    checkpoint_every: int = 0
    seed: int = 0


@dataclass
class SymbolTable:
    """Ordered vocabulary; index 0 is padding and index 1 end-of-sequence."""

    kind: str
    vocab: list[str]

    def __post_init__(self):
        if self.kind not in SYMBOL_KINDS:
            raise InvalidInputError(f"symbol table kind must be one of {SYMBOL_KINDS}")
        if self.vocab[:2] != [PAD, EOS]:
            self.vocab = [PAD, EOS] + [s for s in self.vocab if s not in (PAD, EOS)]
        if len(set(self.vocab)) != len(self.vocab):
            raise InvalidInputError("symbols must be unique")
        self._index = {s: i for i, s in enumerate(self.vocab)}

    @classmethod
    def build(cls, kind: str, symbols) -> "SymbolTable":
        seen = []
        for s in symbols:
            s = str(s)
            if s not in seen:
                seen.append(s)
        return cls(kind, [PAD, EOS] + seen)

    @classmethod
    def for_units(cls, codebook_size: int) -> "SymbolTable":
        return cls("unit", [PAD, EOS] + [str(i) for i in range(codebook_size)])

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, symbol):
        return str(symbol) in self._index

    def encode(self, seq) -> list[int]:
        """Symbol ids with EOS appended."""
        out = []
        for s in seq:
            try:
                out.append(self._index[str(s)])
            except KeyError:
                raise UnknownSymbolError(f"symbol {s!r} not in {self.kind} table") from None
        return out + [1]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.vocab).encode()).hexdigest()[:16]


@dataclass
class AttentionState:
    alignment: torch.Tensor
    cumulative: torch.Tensor

    @classmethod
    def initial(cls, batch: int, length: int, dtype=torch.float32) -> "AttentionState":
        a = torch.zeros(batch, length, dtype=dtype)
        a[:, 0] = 1.0
        return cls(a, a.clone())


class LocationSensitiveAttention(nn.Module):
    def __init__(self, query_dim, memory_dim, attention_dim, n_filters, kernel_size):
        super().__init__()
        if kernel_size % 2 == 0:
            raise InvalidInputError("location kernel size must be odd")
        self.query_layer = nn.Linear(query_dim, attention_dim, bias=False)
        self.memory_layer = nn.Linear(memory_dim, attention_dim, bias=False)
        self.location_conv = nn.Conv1d(2, n_filters, kernel_size, padding=kernel_size // 2, bias=False)
        self.location_dense = nn.Linear(n_filters, attention_dim, bias=False)
        self.v = nn.Linear(attention_dim, 1, bias=False)

    def location_features(self, state: AttentionState) -> torch.Tensor:
        """Convolved (alignment, cumulative) of shape (B, L, n_filters)."""
        x = torch.stack([state.alignment, state.cumulative], dim=1)
        return self.location_conv(x).transpose(1, 2)

    def forward(self, query, memory, processed_memory, state: AttentionState, mask=None):
        loc = self.location_dense(self.location_features(state))
        energies = self.v(torch.tanh(self.query_layer(query).unsqueeze(1) + loc + processed_memory)).squeeze(-1)
        if mask is not None:
            energies = energies.masked_fill(~mask, float("-inf"))
        alignment = F.softmax(energies, dim=-1)
        context = torch.bmm(alignment.unsqueeze(1), memory).squeeze(1)
        return context, AttentionState(alignment, state.cumulative + alignment)


def lsa_attention_step(attention: LocationSensitiveAttention, query, memory, state: AttentionState, mask=None):
    """One attention step: ``(context, new_state)``; accepts batched or single inputs."""
    single = memory.dim() == 2
    if single:
        query, memory = query.unsqueeze(0), memory.unsqueeze(0)
        state = AttentionState(state.alignment.unsqueeze(0), state.cumulative.unsqueeze(0))
        mask = None if mask is None else mask.unsqueeze(0)
    if memory.shape[1] == 0:
        raise InvalidInputError("memory is empty")
    if state.alignment.shape != memory.shape[:2] or state.cumulative.shape != memory.shape[:2]:
        raise InvalidInputError(
            f"alignment shape {tuple(state.alignment.shape)} does not match memory length {memory.shape[1]}"
        )
    context, new = attention(query, memory, attention.memory_layer(memory), state, mask)
    if single:
        return context[0], AttentionState(new.alignment[0], new.cumulative[0])
    return context, new


class Prenet(nn.Module):
    def __init__(self, in_dim, dim, dropout):
        super().__init__()
        self.layers = nn.ModuleList([nn.Linear(in_dim, dim), nn.Linear(dim, dim)])
        self.dropout = dropout

    def forward(self, x):
        # dropout stays on at inference, as in Tacotron 2
        for layer in self.layers:
            x = F.dropout(F.relu(layer(x)), self.dropout, training=self.dropout > 0)
        return x


class AcousticModel(nn.Module):
    def __init__(self, config: TtsConfig, symbols: SymbolTable, speakers: list[str] | None = None):
        super().__init__()
        c = config
        self.config = config
        self.symbol_table = symbols
        self.speakers = list(speakers or ["default"])
        self.register_buffer("mel_mean", torch.zeros(c.n_mels))
        self.register_buffer("mel_std", torch.ones(c.n_mels))
        self.embedding = _new_embedding(len(symbols), c.embed_dim)
        convs = []
        for i in range(c.encoder_layers):
            convs += [nn.Conv1d(c.embed_dim, c.embed_dim, c.encoder_kernel, padding=c.encoder_kernel // 2), nn.ReLU()]
        self.encoder_convs = nn.Sequential(*convs)
        self.encoder_rnn = nn.LSTM(c.embed_dim, c.encoder_dim // 2, batch_first=True, bidirectional=True)
        spk_dim = c.speaker_dim if c.use_speaker else 0
        if c.use_speaker:
            self.speaker_table = nn.Embedding(len(self.speakers), c.speaker_dim)
        self.prenet = Prenet(c.n_mels, c.prenet_dim, c.prenet_dropout)
        self.attention_rnn = nn.LSTMCell(c.prenet_dim + c.encoder_dim + spk_dim, c.attention_rnn_dim)
        self.attention = LocationSensitiveAttention(
            c.attention_rnn_dim, c.encoder_dim, c.attention_dim, c.location_filters, c.location_kernel
        )
        self.decoder_rnn = nn.LSTMCell(c.attention_rnn_dim + c.encoder_dim, c.decoder_rnn_dim)
        self.frame_proj = nn.Linear(c.decoder_rnn_dim + c.encoder_dim, c.n_mels * c.reduction)
        self.stop_proj = nn.Linear(c.decoder_rnn_dim + c.encoder_dim, 1)
        layers = []
        dims = [c.n_mels] + [c.postnet_dim] * (c.postnet_layers - 1) + [c.n_mels]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            layers.append(nn.Conv1d(a, b, c.postnet_kernel, padding=c.postnet_kernel // 2))
            if i < c.postnet_layers - 1:
                layers.append(nn.Tanh())
        self.postnet = nn.Sequential(*layers)

    # -- helpers
    def speaker_index(self, speaker) -> int:
        if speaker is None:
            return 0
        if isinstance(speaker, (int, np.integer)):
            if not 0 <= speaker < len(self.speakers):
                raise UnknownSymbolError(f"speaker index {speaker} out of range")
            return int(speaker)
        if speaker in self.speakers:
            return self.speakers.index(speaker)
        if len(self.speakers) == 1:
            return 0
        raise UnknownSymbolError(f"unknown speaker {speaker!r}")

    def normalize(self, mels):
        return (mels - self.mel_mean) / self.mel_std

    def denormalize(self, mels):
        return mels * self.mel_std + self.mel_mean

    def encode(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        x = self.embedding(ids).transpose(1, 2)
        x = self.encoder_convs(x).transpose(1, 2)
        packed = nn.utils.rnn.pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.encoder_rnn(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=ids.shape[1])
        return out

    def _init_decoder(self, memory):
        b, dt = memory.shape[0], memory.dtype
        c = self.config
        zeros = lambda d: torch.zeros(b, d, dtype=dt)
        return {
            "att_h": zeros(c.attention_rnn_dim), "att_c": zeros(c.attention_rnn_dim),
            "dec_h": zeros(c.decoder_rnn_dim), "dec_c": zeros(c.decoder_rnn_dim),
            "context": zeros(c.encoder_dim),
            "attn": AttentionState.initial(b, memory.shape[1], dt),
        }

    def decoder_step(self, prev_frame, memory, processed, mask, st, spk):
        p = self.prenet(prev_frame)
        parts = [p, st["context"]] + ([spk] if spk is not None else [])
        st["att_h"], st["att_c"] = self.attention_rnn(torch.cat(parts, -1), (st["att_h"], st["att_c"]))
        st["context"], st["attn"] = self.attention(st["att_h"], memory, processed, st["attn"], mask)
        st["dec_h"], st["dec_c"] = self.decoder_rnn(
            torch.cat([st["att_h"], st["context"]], -1), (st["dec_h"], st["dec_c"])
        )
        out = torch.cat([st["dec_h"], st["context"]], -1)
        return self.frame_proj(out), self.stop_proj(out).squeeze(-1)

    def _speaker_vec(self, speaker_idx, batch):
        if not self.config.use_speaker:
            return None
        if speaker_idx is None:
            speaker_idx = torch.zeros(batch, dtype=torch.long)
        return self.speaker_table(speaker_idx)

    def forward(self, ids, lengths, mels, speaker_idx=None):
        """Teacher-forced pass over normalised target ``mels`` (B, T, n_mels).

        Returns ``(mel_before, mel_after, stop_logits, alignments)`` with mel
        outputs cropped to T frames, one stop logit per decoder step and
        alignments of shape (B, steps, L).
        """
        r = self.config.reduction
        b, t, n = mels.shape
        steps = math.ceil(t / r)
        memory = self.encode(ids, lengths)
        processed = self.attention.memory_layer(memory)
        mask = torch.arange(ids.shape[1])[None, :] < lengths[:, None]
        spk = self._speaker_vec(speaker_idx, b)
        padded = F.pad(mels, (0, 0, 0, steps * r - t))
        prev = torch.cat([torch.zeros(b, 1, n, dtype=mels.dtype), padded[:, r - 1 : -1 : r]], dim=1)
        st = self._init_decoder(memory)
        frames, stops, aligns = [], [], []
        for i in range(steps):
            f, s = self.decoder_step(prev[:, i], memory, processed, mask, st, spk)
            frames.append(f)
            stops.append(s)
            aligns.append(st["attn"].alignment)
        before = torch.stack(frames, 1).reshape(b, steps * r, n)[:, :t]
        after = before + self.postnet(before.transpose(1, 2)).transpose(1, 2)
        return before, after, torch.stack(stops, 1), torch.stack(aligns, 1)


def _new_embedding(vocab_size: int, dim: int, generator: torch.Generator | None = None) -> nn.Embedding:
    emb = nn.Embedding(vocab_size, dim)
    bound = math.sqrt(3.0) * math.sqrt(2.0 / (vocab_size + dim))
    with torch.no_grad():
        emb.weight.uniform_(-bound, bound, generator=generator)
    return emb


# ---------------------------------------------------------------- batching and loss


@dataclass
class Example:
    utterance_id: str
    ids: list[int]
    mel: np.ndarray  # (T, n_mels) log mel
    speaker: int = 0


def collate(examples: list[Example], model: AcousticModel):
    dt = model.mel_mean.dtype
    lengths = torch.tensor([len(e.ids) for e in examples])
    ids = torch.zeros(len(examples), int(lengths.max()), dtype=torch.long)
    for i, e in enumerate(examples):
        ids[i, : len(e.ids)] = torch.tensor(e.ids)
    mel_lengths = torch.tensor([e.mel.shape[0] for e in examples])
    mels = torch.zeros(len(examples), int(mel_lengths.max()), model.config.n_mels, dtype=dt)
    for i, e in enumerate(examples):
        mels[i, : e.mel.shape[0]] = model.normalize(torch.as_tensor(e.mel, dtype=dt))
    speakers = torch.tensor([e.speaker for e in examples])
    return ids, lengths, mels, mel_lengths, speakers


def tts_loss(model: AcousticModel, batch) -> tuple[torch.Tensor, dict]:
    """Masked mel L2 before and after the postnet plus weighted stop BCE."""
    ids, lengths, mels, mel_lengths, speakers = batch
    before, after, stops, aligns = model(ids, lengths, mels, speakers)
    r = model.config.reduction
    frame_mask = (torch.arange(mels.shape[1])[None, :] < mel_lengths[:, None]).unsqueeze(-1).to(mels.dtype)
    denom = frame_mask.sum() * mels.shape[2]
    mel_before = (((before - mels) ** 2) * frame_mask).sum() / denom
    mel_after = (((after - mels) ** 2) * frame_mask).sum() / denom
    n_steps = torch.div(mel_lengths + r - 1, r, rounding_mode="floor")
    step_idx = torch.arange(stops.shape[1])[None, :]
    stop_target = (step_idx >= (n_steps[:, None] - 1)).to(stops.dtype)
    step_mask = (step_idx < n_steps[:, None]).to(stops.dtype)
    bce = F.binary_cross_entropy_with_logits(
        stops, stop_target, pos_weight=torch.tensor(model.config.stop_pos_weight, dtype=stops.dtype), reduction="none"
    )
    stop = (bce * step_mask).sum() / step_mask.sum()
    total = mel_before + mel_after + stop
    parts = {"mel_before": mel_before, "mel_after": mel_after, "stop": stop}
    if model.config.guided_attention > 0:
        parts["attention"] = guided_attention_loss(aligns, lengths, n_steps, model.config.guided_sigma)
        total = total + model.config.guided_attention * parts["attention"]
    parts["total"] = total
    return total, {k: float(v.detach()) for k, v in parts.items()}


def guided_attention_loss(aligns, text_lengths, step_lengths, sigma: float = 0.2) -> torch.Tensor:
    """Mean attention mass far from the diagonal, ``W = 1 - exp(-(l/L - s/S)^2 / 2 sigma^2)``."""
    b, steps, length = aligns.shape
    s = torch.arange(steps, dtype=aligns.dtype)[None, :, None] / step_lengths[:, None, None].to(aligns.dtype)
    pos = torch.arange(length, dtype=aligns.dtype)[None, None, :] / text_lengths[:, None, None].to(aligns.dtype)
    weight = 1.0 - torch.exp(-((pos - s) ** 2) / (2.0 * sigma**2))
    mask = (torch.arange(steps)[None, :, None] < step_lengths[:, None, None]) & (
        torch.arange(length)[None, None, :] < text_lengths[:, None, None]
    )
    return (aligns * weight * mask).sum() / mask.sum()


def forward_teacher_forced(model: AcousticModel, symbol_ids, target_mels, speaker_id=None):
    """Single-utterance teacher-forced pass on raw log mels.

    Returns ``(predicted log mels (T, n_mels), stop logits (steps,), alignment (steps, L))``.
    """
    ids = list(symbol_ids)
    if not ids:
        raise InvalidInputError("symbol sequence is empty")
    if min(ids) < 0 or max(ids) >= len(model.symbol_table):
        raise UnknownSymbolError("symbol id outside the model's table")
    dt = model.mel_mean.dtype
    mels = model.normalize(torch.as_tensor(np.asarray(target_mels), dtype=dt)).unsqueeze(0)
    spk = torch.tensor([model.speaker_index(speaker_id)])
    _, after, stops, aligns = model(torch.tensor([ids]), torch.tensor([len(ids)]), mels, spk)
    return model.denormalize(after)[0], stops[0], aligns[0]


# ---------------------------------------------------------------- training


@dataclass
class Trainer:
    """Owns a model, its optimiser and the step counter; resumable bit-exactly."""

    model: AcousticModel
    examples: list[Example]
    phase: str = "pretrain"
    step: int = 0
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.examples:
            raise InvalidInputError("empty training set")
        vocab = len(self.model.symbol_table)
        for e in self.examples:
            if not e.ids or max(e.ids) >= vocab or min(e.ids) < 0:
                raise UnknownSymbolError(f"{e.utterance_id}: symbol outside the model's table")
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=self.model.config.lr)
        self._epoch_cache = {}

    def _batch(self, step: int) -> list[Example]:
        from .data import bucket_batches

        c = self.model.config
        per_epoch = math.ceil(len(self.examples) / c.batch_size)
        epoch, pos = divmod(step, per_epoch)
        if epoch not in self._epoch_cache:
            self._epoch_cache = {
                epoch: bucket_batches(self.examples, c.batch_size, key=lambda e: e.mel.shape[0],
                                      seed=c.seed * 100003 + epoch)
            }
        return self._epoch_cache[epoch][pos]

    def train_step(self) -> dict:
        self.model.train()
        batch = collate(self._batch(self.step), self.model)
        loss, parts = tts_loss(self.model, batch)
        self.optimizer.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.model.parameters(), self.model.config.grad_clip)
        self.optimizer.step()
        self.step += 1
        parts["step"] = self.step
        self.history.append(parts)
        return parts

    def run(self, steps: int, checkpoint_path=None) -> list[dict]:
        every = self.model.config.checkpoint_every
        for _ in range(steps):
            parts = self.train_step()
            if self.step % 100 == 0:
                log.info("%s step %d loss %.4f", self.phase, self.step, parts["total"])
            if checkpoint_path and every and self.step % every == 0:
                self.save(checkpoint_path)
        return self.history

    # -- persistence
    def save(self, path) -> str:
        tensors = {f"model/{k}": v.detach().cpu().numpy() for k, v in self.model.state_dict().items()}
        names = {id(p): n for n, p in self.model.named_parameters()}
        for group in self.optimizer.param_groups:
            for p in group["params"]:
                st = self.optimizer.state.get(p)
                if st:
                    n = names[id(p)]
                    tensors[f"optim/{n}/exp_avg"] = st["exp_avg"].numpy()
                    tensors[f"optim/{n}/exp_avg_sq"] = st["exp_avg_sq"].numpy()
                    tensors[f"optim/{n}/step"] = np.array([float(st["step"])])
        tensors["rng/torch"] = torch.get_rng_state().numpy().astype(np.int64)
        meta = _model_meta(self.model, self.phase, self.step)
        meta.update(self.meta)
        return save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path, examples: list[Example]) -> "Trainer":
        tensors, meta = load_checkpoint(path)
        model = _model_from(tensors, meta)
        tr = cls(model, examples, phase=meta["phase"], step=meta["step"])
        names = dict(model.named_parameters())
        for n, p in names.items():
            if f"optim/{n}/exp_avg" in tensors:
                tr.optimizer.state[p] = {
                    "step": torch.tensor(float(tensors[f"optim/{n}/step"][0])),
                    "exp_avg": torch.as_tensor(tensors[f"optim/{n}/exp_avg"]).clone(),
                    "exp_avg_sq": torch.as_tensor(tensors[f"optim/{n}/exp_avg_sq"]).clone(),
                }
        if "rng/torch" in tensors:
            torch.set_rng_state(torch.as_tensor(tensors["rng/torch"].astype(np.uint8)))
        return tr


def new_model(config: TtsConfig, symbols: SymbolTable, speakers, examples_mels=None) -> AcousticModel:
    """Seeded model; mel normaliser statistics come from ``examples_mels`` if given."""
    torch.manual_seed(config.seed)
    model = AcousticModel(config, symbols, speakers)
    if examples_mels:
        stacked = np.concatenate(examples_mels)
        model.mel_mean.copy_(torch.as_tensor(stacked.mean(0)))
        model.mel_std.copy_(torch.as_tensor(np.maximum(stacked.std(0), 1e-2)))
    return model


def train(model: AcousticModel, examples: list[Example], steps: int | None = None, phase: str = "pretrain",
          checkpoint_path=None) -> Trainer:
    torch.manual_seed(model.config.seed + 1)
    tr = Trainer(model, examples, phase=phase)
    tr.run(model.config.steps if steps is None else steps, checkpoint_path)
    return tr


def swap_symbol_table(pretrained: AcousticModel, table: SymbolTable, fresh_speaker: bool = True,
                      seed: int = 0, speakers=None) -> AcousticModel:
    """Copy of ``pretrained`` with a freshly initialised embedding for ``table``.

    Every other parameter is copied.  With ``fresh_speaker`` the speaker table
    is replaced by a new single-row table (or one row per ``speakers``).
    """
    model = copy.deepcopy(pretrained)
    gen = torch.Generator().manual_seed(seed)
    emb = _new_embedding(len(table), pretrained.config.embed_dim, gen)
    if emb.weight.shape[1] != pretrained.embedding.weight.shape[1]:
        raise InvalidInputError("embedding dimension mismatch")
    model.embedding = emb.to(pretrained.embedding.weight.dtype)
    model.symbol_table = table
    if fresh_speaker and pretrained.config.use_speaker:
        model.speakers = list(speakers or ["target"])
        spk = nn.Embedding(len(model.speakers), pretrained.config.speaker_dim)
        with torch.no_grad():
            spk.weight.normal_(0.0, 1.0, generator=gen)
        model.speaker_table = spk.to(pretrained.embedding.weight.dtype)
    return model


def finetune(pretrained: AcousticModel, phoneme_table: SymbolTable, examples: list[Example],
             steps: int | None = None, fresh_speaker: bool = True, seed: int | None = None,
             checkpoint_path=None, guided_attention: float | None = None) -> Trainer:
    """Swap in ``phoneme_table`` and continue training on paired examples.

    ``guided_attention`` replaces the pretrained loss weight when given.
    """
    if phoneme_table.kind == "unit":
        raise InvalidInputError("fine-tuning expects a phoneme or grapheme table")
    seed = pretrained.config.seed if seed is None else seed
    model = swap_symbol_table(pretrained, phoneme_table, fresh_speaker, seed)
    if guided_attention is not None:
        model.config = replace(model.config, guided_attention=float(guided_attention))
    torch.manual_seed(seed + 2)
    tr = Trainer(model, examples, phase="finetune")
    tr.run(model.config.steps if steps is None else steps, checkpoint_path)
    return tr


# ---------------------------------------------------------------- inference


@dataclass
class InferenceResult:
    mel: MelSpectrogram
    stop_reason: str
    alignment: np.ndarray
    steps: int


@torch.no_grad()
def infer(model: AcousticModel, symbol_ids, speaker_id=None, max_steps: int | None = None, seed: int = 0,
          frame_config: FrameConfig = FrameConfig(), sample_rate: int = 16000) -> InferenceResult:
    """Free-running decoding until the stop probability passes the threshold."""
    ids = list(symbol_ids)
    if not ids:
        raise InvalidInputError("symbol sequence is empty")
    if min(ids) < 0 or max(ids) >= len(model.symbol_table):
        raise UnknownSymbolError("symbol id outside the model's table")
    model.eval()
    torch.manual_seed(seed)
    c = model.config
    max_steps = c.max_steps if max_steps is None else max_steps
    dt = model.mel_mean.dtype
    ids_t = torch.tensor([ids])
    memory = model.encode(ids_t, torch.tensor([len(ids)]))
    processed = model.attention.memory_layer(memory)
    spk = model._speaker_vec(torch.tensor([model.speaker_index(speaker_id)]), 1)
    st = model._init_decoder(memory)
    prev = torch.zeros(1, c.n_mels, dtype=dt)
    frames, aligns = [], []
    reason = "max_steps"
    for _ in range(max_steps):
        f, s = model.decoder_step(prev, memory, processed, None, st, spk)
        frames.append(f.view(1, c.reduction, c.n_mels))
        aligns.append(st["attn"].alignment[0].numpy())
        prev = f.view(c.reduction, c.n_mels)[-1:].clone()
        if torch.sigmoid(s)[0] > c.stop_threshold:
            reason = "stop"
            break
    before = torch.cat(frames, 1)
    after = before + model.postnet(before.transpose(1, 2)).transpose(1, 2)
    mel = model.denormalize(after)[0].double().numpy()
    return InferenceResult(MelSpectrogram(mel, frame_config, sample_rate), reason, np.stack(aligns), len(frames))


def mel_to_magnitude(log_mel: np.ndarray, sample_rate: int, cfg: FrameConfig) -> np.ndarray:
    """Approximate linear magnitude from log mel via the filterbank pseudo-inverse."""
    fb = mel_filterbank(sample_rate, cfg.fft_size, log_mel.shape[1])
    return np.maximum(np.exp(log_mel) @ np.linalg.pinv(fb).T, 0.0)


def vocode(log_mel: np.ndarray, sample_rate: int = 16000, cfg: FrameConfig = FrameConfig(), iters: int = 60,
           seed: int = 0) -> Waveform:
    return griffin_lim(mel_to_magnitude(log_mel, sample_rate, cfg), cfg, iters, sample_rate, seed=seed)


def synthesize(model: AcousticModel, symbol_ids, speaker_id=None, max_steps=None, seed: int = 0,
               frame_config: FrameConfig = FrameConfig(), sample_rate: int = 16000, gl_iters: int = 60) -> Waveform:
    res = infer(model, symbol_ids, speaker_id, max_steps, seed, frame_config, sample_rate)
    return vocode(res.mel.frames, sample_rate, frame_config, gl_iters, seed)


# ---------------------------------------------------------------- checkpoints


def _model_meta(model: AcousticModel, phase: str, step: int) -> dict:
    return {
        "kind": "tts",
        "phase": phase,
        "step": step,
        "config": asdict(model.config),
        "symbol_kind": model.symbol_table.kind,
        "vocab": model.symbol_table.vocab,
        "vocab_hash": model.symbol_table.digest(),
        "speakers": model.speakers,
        "seed": model.config.seed,
        "dtype": str(model.mel_mean.dtype).replace("torch.", ""),
    }


def _model_from(tensors: dict, meta: dict) -> AcousticModel:
    if meta.get("kind") != "tts":
        raise InvalidInputError("not an acoustic model checkpoint")
    config = TtsConfig(**meta["config"])
    model = AcousticModel(config, SymbolTable(meta["symbol_kind"], meta["vocab"]), meta["speakers"])
    if meta.get("dtype") == "float64":
        model = model.double()
    state = {k[len("model/"):]: torch.as_tensor(v) for k, v in tensors.items() if k.startswith("model/")}
    model.load_state_dict(state)
    return model


def save_model(path, model: AcousticModel, phase: str, step: int = 0, extra: dict | None = None) -> str:
    tensors = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = _model_meta(model, phase, step)
    meta.update(extra or {})
    return save_checkpoint(path, tensors, meta)


def load_model(path) -> tuple[AcousticModel, dict]:
    tensors, meta = load_checkpoint(path)
    model = _model_from(tensors, meta)
    model.eval()
    return model, meta


def parameter_groups(model: AcousticModel) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
