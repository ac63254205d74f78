"""VQ-VAE over MFCC frames: encoder, nearest-codeword quantizer, decoder.

The training loss is

    reconstruction + ||sg(z) - e_k||^2 + beta * ||z - sg(e_k)||^2

with the reconstruction gradient copied past the quantizer to the encoder
(straight-through).  All three terms are element means, so a unit-variance
Gaussian likelihood reduces to mean squared error.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import _kernels
from .errors import InvalidInputError, UnknownSymbolError
from .io import load_checkpoint, save_checkpoint
from .signal import N_BASE_CEPSTRA, MfccFrames

log = logging.getLogger(__name__)

FEAT_DIM = 3 * N_BASE_CEPSTRA


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 2 or e.shape[1] < 1:
            raise InvalidInputError("codebook must be a C x D matrix with C >= 2, D >= 1")
        if not np.all(np.isfinite(e)):
            raise InvalidInputError("codebook has non-finite entries")
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass
class VqConfig:
    codebook_size: int = 256
    dim: int = 64
    beta: float = 0.25
    jitter: float = 0.12
    hidden: int = 128
    speaker_dim: int = 16
    downsample: int = 2
    steps: int = 5000
    lr: float = 3e-4
    # Adam moves each weight ~lr per step; codewords need to keep pace with z
    codebook_lr_scale: float = 10.0
    grad_clip: float = 1.0
    batch_size: int = 16
    segment_frames: int = 64
    seed: int = 0

    # multi-corpus setting doubles the inventory
    @classmethod
    def multi_corpus(cls, **kw):
        kw.setdefault("codebook_size", 512)
        return cls(**kw)


@dataclass
class VqLoss:
    reconstruction: torch.Tensor
    codebook_term: torch.Tensor
    commitment_term: torch.Tensor
    beta: float
    total: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.total = self.reconstruction + self.codebook_term + self.beta * self.commitment_term

    def as_floats(self) -> dict:
        return {
            "recon": float(self.reconstruction.detach()),
            "codebook": float(self.codebook_term.detach()),
            "commit": float(self.commitment_term.detach()),
            "total": float(self.total.detach()),
        }


class StraightThrough(torch.autograd.Function):
    """Forward returns the selected codewords; backward hands the gradient to ``z``."""

    @staticmethod
    def forward(ctx, z, e_k):
        return e_k.clone()

    @staticmethod
    def backward(ctx, grad):
        return grad, None


class VqVae(nn.Module):
    def __init__(self, config: VqConfig, speakers: list[str]):
        super().__init__()
        if config.downsample != 2:
            raise InvalidInputError("encoder has exactly one stride-2 layer; downsample must be 2")
        self.config = config
        self.speakers = list(speakers)
        h, d, c = config.hidden, config.dim, config.codebook_size
        self.register_buffer("feat_mean", torch.zeros(FEAT_DIM))
        self.register_buffer("feat_std", torch.ones(FEAT_DIM))
        self.encoder = nn.Sequential(
            nn.Conv1d(FEAT_DIM, h, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, h, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, h, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, d, 1),
        )
        self.codebook = nn.Parameter(torch.empty(c, d).uniform_(-1.0 / c, 1.0 / c))
        self.speaker_table = nn.Embedding(max(len(self.speakers), 1), config.speaker_dim)
        self.decoder = nn.Sequential(
            nn.Conv1d(d + config.speaker_dim, h, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, h, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, FEAT_DIM, 1),
        )

    def speaker_index(self, speaker_id) -> int:
        if isinstance(speaker_id, (int, np.integer)):
            if not 0 <= speaker_id < len(self.speakers):
                raise UnknownSymbolError(f"speaker index {speaker_id} out of range")
            return int(speaker_id)
        try:
            return self.speakers.index(speaker_id)
        except ValueError:
            raise UnknownSymbolError(f"unknown speaker {speaker_id!r}") from None

    def normalize(self, feats: torch.Tensor) -> torch.Tensor:
        return (feats - self.feat_mean) / self.feat_std

    def encode(self, feats: torch.Tensor) -> torch.Tensor:
        """(B, T, 39) raw MFCCs -> (B, ceil(T / 2), D)."""
        x = self.normalize(feats).transpose(1, 2)
        return self.encoder(x).transpose(1, 2)

    def nearest(self, z: torch.Tensor) -> torch.Tensor:
        # expanded form for speed; extraction uses the exact kernel instead
        dist = (z * z).sum(-1, keepdim=True) - 2.0 * z @ self.codebook.t() + (self.codebook**2).sum(-1)
        return dist.argmin(-1)

    def decode(self, zq: torch.Tensor, speaker_idx: torch.Tensor, n_frames: int) -> torch.Tensor:
        """(B, N, D) quantized latents -> (B, n_frames, 39) normalized features."""
        spk = self.speaker_table(speaker_idx).unsqueeze(1).expand(-1, zq.shape[1], -1)
        h = torch.cat([zq, spk], dim=-1).repeat_interleave(self.config.downsample, dim=1)
        h = h[:, :n_frames].transpose(1, 2)
        return self.decoder(h).transpose(1, 2)

    def forward(self, feats: torch.Tensor, speaker_idx: torch.Tensor, jitter_p: float = 0.0):
        z = self.encode(feats)
        idx = self.nearest(z.detach())
        e_k = self.codebook[idx]
        zq = StraightThrough.apply(z, e_k.detach())
        if jitter_p > 0.0:
            zq = zq.gather(1, jitter_index_torch(zq.shape[0], zq.shape[1], jitter_p).unsqueeze(-1).expand_as(zq))
        x_hat = self.decode(zq, speaker_idx, feats.shape[1])
        loss = vq_loss(self.normalize(feats), x_hat, z, e_k, self.config.beta)
        return x_hat, idx, loss

    def get_codebook(self) -> Codebook:
        return Codebook(self.codebook.detach().cpu().numpy().astype(np.float64))


# ---------------------------------------------------------------- quantizer


def quantize(z, cb: Codebook):
    """Nearest codeword to a single latent vector: ``(k, e_k)``, lowest index on ties."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != cb.dim:
        raise InvalidInputError(f"latent must be a vector of length {cb.dim}")
    k = int(_kernels.nearest(z[None, :], cb.entries)[0])
    return k, cb.entries[k]


def quantize_sequence(z_seq, cb: Codebook):
    """Vectorised :func:`quantize` over the rows of ``z_seq``."""
    z_seq = np.asarray(z_seq, dtype=np.float64)
    if z_seq.ndim != 2 or z_seq.shape[1] != cb.dim:
        raise InvalidInputError(f"latents must have shape (N, {cb.dim})")
    idx = _kernels.nearest(z_seq, cb.entries)
    return idx, cb.entries[idx]


# ---------------------------------------------------------------- jitter


def jitter_index(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Source index per position after jitter: self, left or right neighbour."""
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError("jitter probability must lie in [0, 1]")
    idx = np.arange(n)
    if n < 2 or p == 0.0:
        return idx
    replace = rng.random(n) < p
    step = np.where(rng.random(n) < 0.5, -1, 1)
    step[0] = 1
    step[-1] = -1
    return np.where(replace, idx + step, idx)


def jitter(seq, p: float, rng: np.random.Generator | None = None):
    """Replace each position, with probability ``p``, by a temporal neighbour."""
    rng = np.random.default_rng() if rng is None else rng
    seq = np.asarray(seq)
    return seq[jitter_index(seq.shape[0], p, rng)]


def jitter_index_torch(batch: int, n: int, p: float) -> torch.Tensor:
    """Batched jitter indices drawn from torch's global generator."""
    idx = torch.arange(n).expand(batch, n)
    if n < 2 or p <= 0.0:
        return idx.clone()
    replace = torch.rand(batch, n) < p
    step = torch.where(torch.rand(batch, n) < 0.5, -1, 1)
    step[:, 0] = 1
    step[:, -1] = -1
    return torch.where(replace, idx + step, idx)


# ---------------------------------------------------------------- loss


def vq_loss(x, x_hat, z, e_k, beta: float) -> VqLoss:
    """Reconstruction, codebook and commitment terms (stop-gradients applied)."""
    x, x_hat, z, e_k = (torch.as_tensor(t) for t in (x, x_hat, z, e_k))
    if x.shape != x_hat.shape:
        raise InvalidInputError(f"reconstruction shape {tuple(x_hat.shape)} != target {tuple(x.shape)}")
    if z.shape != e_k.shape:
        raise InvalidInputError(f"latent shape {tuple(z.shape)} != codeword shape {tuple(e_k.shape)}")
    recon = F.mse_loss(x_hat, x)
    codebook_term = F.mse_loss(e_k, z.detach())
    commitment_term = F.mse_loss(z, e_k.detach())
    return VqLoss(recon, codebook_term, commitment_term, beta)


# ---------------------------------------------------------------- numpy-facing ops


def _feats_tensor(feats) -> torch.Tensor:
    arr = feats.frames if isinstance(feats, MfccFrames) else np.asarray(feats, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != FEAT_DIM:
        raise InvalidInputError(f"features must have width {FEAT_DIM}")
    return torch.as_tensor(arr, dtype=torch.float32).unsqueeze(0)


@torch.no_grad()
def encode(model: VqVae, feats) -> np.ndarray:
    """Latent sequence ``(ceil(T / 2), D)`` for one utterance (no jitter)."""
    model.eval()
    return model.encode(_feats_tensor(feats))[0].double().numpy()


@torch.no_grad()
def reconstruct(model: VqVae, zq_seq, speaker_id, n_frames: int | None = None) -> np.ndarray:
    """Decode quantized latents into MFCC-space frames of width 39."""
    model.eval()
    spk = torch.tensor([model.speaker_index(speaker_id)])
    zq = torch.as_tensor(np.asarray(zq_seq), dtype=torch.float32).unsqueeze(0)
    n = zq.shape[1] * model.config.downsample if n_frames is None else n_frames
    out = model.decode(zq, spk, n)[0]
    return (out * model.feat_std + model.feat_mean).double().numpy()


def codebook_coverage(model: VqVae, feats_list) -> float:
    cb = model.get_codebook()
    used = set()
    for feats in feats_list:
        idx, _ = quantize_sequence(encode(model, feats), cb)
        used.update(idx.tolist())
    return len(used) / cb.size


# ---------------------------------------------------------------- training


LOG_COLUMNS = ["step", "recon", "codebook", "commit", "total", "codebook_usage"]


def train_vqvae(utterances, config: VqConfig, log_path=None):
    """Train on ``[(speaker_id, MfccFrames), ...]``; returns ``(model, history)``.

    ``history`` holds one dict per step with the loss components and the
    fraction of the codebook selected in that batch.
    """
    utterances = [(spk, f.frames if isinstance(f, MfccFrames) else np.asarray(f)) for spk, f in utterances]
    if not utterances:
        raise InvalidInputError("empty training corpus")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    speakers = sorted({spk for spk, _ in utterances})
    model = VqVae(config, speakers)
    stacked = np.concatenate([f for _, f in utterances])
    model.feat_mean.copy_(torch.as_tensor(stacked.mean(0), dtype=torch.float32))
    model.feat_std.copy_(torch.as_tensor(np.maximum(stacked.std(0), 1e-3), dtype=torch.float32))

    seg = config.segment_frames
    feats = [torch.as_tensor(np.pad(f, ((0, max(0, seg - len(f))), (0, 0)), mode="edge"), dtype=torch.float32)
             for _, f in utterances]
    spk_idx = [speakers.index(spk) for spk, _ in utterances]
    weights = np.array([len(f) for f in feats], dtype=np.float64)
    weights /= weights.sum()

    rest = [p for n, p in model.named_parameters() if n != "codebook"]
    opt = torch.optim.Adam(
        [{"params": rest}, {"params": [model.codebook], "lr": config.lr * config.codebook_lr_scale}],
        lr=config.lr,
    )
    history = []
    writer = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    try:
        model.train()
        for step in range(1, config.steps + 1):
            picks = rng.choice(len(feats), size=config.batch_size, p=weights)
            batch = []
            for i in picks:
                start = rng.integers(0, feats[i].shape[0] - seg + 1)
                batch.append(feats[i][start : start + seg])
            x = torch.stack(batch)
            spk = torch.tensor([spk_idx[i] for i in picks])
            _, idx, loss = model(x, spk, config.jitter)
            opt.zero_grad()
            loss.total.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            row = {"step": step, **loss.as_floats(), "codebook_usage": len(torch.unique(idx)) / config.codebook_size}
            history.append(row)
            if writer is not None:
                writer.writerow([row[c] if c == "step" else f"{row[c]:.6g}" for c in LOG_COLUMNS])
            if step % 500 == 0:
                log.info("vqvae step %d total %.4f usage %.3f", step, row["total"], row["codebook_usage"])
    finally:
        if writer is not None:
            fh.close()
    model.eval()
    return model, history


# ---------------------------------------------------------------- checkpoints


def save_vqvae(path, model: VqVae, extra: dict | None = None) -> str:
    meta = {
        "kind": "vqvae",
        "config": asdict(model.config),
        "speakers": model.speakers,
        **(extra or {}),
    }
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    return save_checkpoint(path, tensors, meta)


def load_vqvae(path) -> tuple[VqVae, dict]:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "vqvae":
        raise InvalidInputError(f"{path} is not a VQ-VAE checkpoint")
    model = VqVae(VqConfig(**meta["config"]), meta["speakers"])
    model.load_state_dict({k: torch.as_tensor(v) for k, v in tensors.items()})
    model.eval()
    return model, meta
