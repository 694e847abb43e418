"""NeuralODF: MLP with an early intersection head, clamped loss, latent codes, checkpoints."""

from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from odf.domain import DEFAULT_DOMAIN, DomainConfig, OdfBackend, OdfSamples, check_unit_dirs
from odf.errors import ConfigError, DataError
from odf.storage import load_json, save_json, sidecar_path, timestamp

logger = logging.getLogger(__name__)

MAGIC = b"ODFM"
VERSION = 1
HEADER = struct.Struct("<4sIIIIIII")


@dataclass(frozen=True)
class ModelConfig:
    """n_layers dense layers: n_layers - 1 hidden (LayerNorm + ReLU) and the depth head.

    The intersection head branches after `intersect_after` hidden layers; the
    input is re-concatenated in front of hidden layer `skip_layer` (1-based).
    latent_dim 0 means single-shape (overfit) mode.
    """

    n_layers: int = 8
    width: int = 256
    latent_dim: int = 0
    intersect_after: int = 2
    skip_layer: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 3:
            raise ConfigError(f"n_layers must be ≥ 3, got {self.n_layers}")
        if self.width < 1 or self.latent_dim < 0:
            raise ConfigError(f"invalid width {self.width} or latent_dim {self.latent_dim}")
        if not 1 <= self.intersect_after <= self.n_hidden:
            raise ConfigError(f"intersect_after must be in [1, {self.n_hidden}], got {self.intersect_after}")
        if not 2 <= self.skip <= self.n_hidden:
            raise ConfigError(f"skip_layer must be in [2, {self.n_hidden}], got {self.skip}")

    @property
    def n_hidden(self) -> int:
        return self.n_layers - 1

    @property
    def skip(self) -> int:
        return self.skip_layer if self.skip_layer is not None else max(2, self.n_layers // 2)

    @property
    def in_dim(self) -> int:
        return 6 + self.latent_dim


@dataclass
class OdfPrediction:
    """Raw depth (unclamped) and intersection logit per ray."""

    depth: torch.Tensor
    logit: torch.Tensor

    @property
    def confidence(self) -> torch.Tensor:
        return torch.sigmoid(self.logit)


class OdfMLP(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            layers, norms = [], []
            for i in range(1, cfg.n_hidden + 1):
                fan_in = cfg.in_dim if i == 1 else cfg.width
                if i == cfg.skip:
                    fan_in += cfg.in_dim
                layers.append(nn.Linear(fan_in, cfg.width, dtype=dtype))
                norms.append(nn.LayerNorm(cfg.width, dtype=dtype))
            self.layers = nn.ModuleList(layers)
            self.norms = nn.ModuleList(norms)
            self.intersect_head = nn.Linear(cfg.width, 1, dtype=dtype)
            self.depth_head = nn.Linear(cfg.width, 1, dtype=dtype)
        for head in (self.intersect_head, self.depth_head):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    @property
    def dtype(self) -> torch.dtype:
        return self.depth_head.weight.dtype

    def _inputs(self, origins: torch.Tensor, dirs: torch.Tensor, latent: torch.Tensor | None) -> torch.Tensor:
        tol = 1e-9 if dirs.dtype == torch.float64 else 1e-5
        if dirs.numel() and ((dirs.norm(dim=-1) - 1).abs() > tol).any():
            raise DataError("ray directions passed to the model must be unit length")
        x = torch.cat([origins, dirs], dim=-1)
        if self.cfg.latent_dim == 0:
            if latent is not None:
                raise ConfigError("single-shape model takes no latent code")
            return x
        if latent is None:
            raise ConfigError("autodecoder model needs a latent code")
        if latent.dim() == 1:
            latent = latent.expand(len(x), -1)
        return torch.cat([x, latent], dim=-1)

    def forward(self, origins: torch.Tensor, dirs: torch.Tensor,
                latent: torch.Tensor | None = None) -> OdfPrediction:
        x = self._inputs(origins, dirs, latent)
        h = x
        logit = None
        for i, (layer, norm) in enumerate(zip(self.layers, self.norms), start=1):
            if i == self.cfg.skip:
                h = torch.cat([h, x], dim=-1)
            h = F.relu(norm(layer(h)))
            if i == self.cfg.intersect_after:
                logit = self.intersect_head(h).squeeze(-1)
        return OdfPrediction(depth=self.depth_head(h).squeeze(-1), logit=logit)


def mlp_forward(model: OdfMLP, origin, direction, latent=None) -> tuple[float, float]:
    """Single-ray convenience: (raw depth, confidence)."""
    o = torch.as_tensor(np.asarray(origin, dtype=np.float64).reshape(1, 3), dtype=model.dtype)
    d = torch.as_tensor(np.asarray(direction, dtype=np.float64).reshape(1, 3), dtype=model.dtype)
    z = None if latent is None else torch.as_tensor(np.asarray(latent), dtype=model.dtype)
    with torch.no_grad():
        pred = model(o, d, z)
    return float(pred.depth[0]), float(pred.confidence[0])


# ─── Loss ────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class LossConfig:
    lambda_depth: float = 5.0
    lambda_latent: float = 1e-4
    psi: float = DEFAULT_DOMAIN.depth_clamp

    def __post_init__(self):
        if self.lambda_depth < 0 or self.lambda_latent < 0:
            raise ConfigError("loss weights must be ≥ 0")
        if not self.psi > 0:
            raise ConfigError(f"psi must be > 0, got {self.psi}")


@dataclass
class LossTerms:
    total: torch.Tensor
    depth: torch.Tensor
    prob: torch.Tensor
    reg: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


def clamped_mse(pred: torch.Tensor, label: torch.Tensor, psi: float) -> torch.Tensor:
    return ((torch.clamp(pred, max=psi) - torch.clamp(label, max=psi)) ** 2).mean()


def odf_loss(pred: OdfPrediction, depth: torch.Tensor, hit: torch.Tensor, cfg: LossConfig = LossConfig(),
             latents: torch.Tensor | None = None) -> LossTerms:
    """λ1·clamped depth MSE + BCE(intersection) + λ2·mean ‖z‖² over the distinct codes."""
    l_depth = clamped_mse(pred.depth, depth, cfg.psi)
    l_prob = F.binary_cross_entropy_with_logits(pred.logit, hit.to(pred.logit.dtype))
    if latents is None:
        l_reg = torch.zeros((), dtype=pred.depth.dtype)
    else:
        l_reg = (latents.reshape(-1, latents.shape[-1]) ** 2).sum(dim=-1).mean()
    total = cfg.lambda_depth * l_depth + l_prob + cfg.lambda_latent * l_reg
    return LossTerms(total, l_depth, l_prob, l_reg)


# ─── Latent codes ────────────────────────────────────────────────────────


class LatentTable(nn.Module):
    """One code per training instance, keyed by instance id."""

    def __init__(self, ids: list[str], dim: int, std: float = 0.01, seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if len(set(ids)) != len(ids):
            raise ConfigError("instance ids must be unique")
        self.ids = list(ids)
        self.codes = nn.Embedding(len(ids), dim, dtype=dtype)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.codes.weight.copy_(torch.randn(len(ids), dim, generator=gen, dtype=dtype) * std)

    def index(self, instance_id: str) -> int:
        try:
            return self.ids.index(instance_id)
        except ValueError:
            raise DataError(f"unknown instance id '{instance_id}'") from None

    def code(self, instance_id: str) -> torch.Tensor:
        return self.codes.weight[self.index(instance_id)]

    def forward(self, idx: torch.Tensor) -> torch.Tensor:
        return self.codes(idx)


# ─── Checkpoints ─────────────────────────────────────────────────────────


@dataclass
class Checkpoint:
    model: OdfMLP
    latents: LatentTable | None = None
    manifest: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, model: OdfMLP, latents: LatentTable | None = None,
                    manifest: dict | None = None):
    """ODFM binary (float32 parameters in declaration order, then latents) + JSON manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = model.cfg
    n_latents = 0 if latents is None else len(latents.ids)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, cfg.n_layers, cfg.width, cfg.latent_dim, n_latents,
                            cfg.intersect_after, cfg.skip))
        for tensor in model.state_dict().values():
            f.write(tensor.detach().cpu().numpy().astype("<f4").tobytes())
        if latents is not None:
            f.write(latents.codes.weight.detach().cpu().numpy().astype("<f4").tobytes())
    meta = {
        "model": asdict(cfg),
        "instance_ids": [] if latents is None else latents.ids,
        "saved": timestamp(),
    }
    meta.update(manifest or {})
    save_json(sidecar_path(path), meta)
    logger.info("Saved checkpoint %s (%d parameters, %d latents)", path,
                sum(p.numel() for p in model.parameters()), n_latents)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise DataError(f"{path} is too short for an ODFM header")
    magic, version, n_layers, width, latent_dim, n_latents, intersect_after, skip = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path} is not an ODFM checkpoint")
    if version != VERSION:
        raise DataError(f"{path}: unsupported ODFM version {version}")
    meta = load_json(sidecar_path(path))
    seed = int(meta.get("model", {}).get("seed", 0))
    cfg = ModelConfig(n_layers, width, latent_dim, intersect_after, skip, seed)
    model = OdfMLP(cfg)
    values = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    state, pos = {}, 0
    for name, tensor in model.state_dict().items():
        n = tensor.numel()
        if pos + n > len(values):
            raise DataError(f"{path} is truncated")
        state[name] = torch.from_numpy(values[pos:pos + n].copy()).reshape(tensor.shape)
        pos += n
    model.load_state_dict(state)
    model.eval()
    latents = None
    if n_latents:
        ids = meta.get("instance_ids") or [str(i) for i in range(n_latents)]
        if len(values) - pos != n_latents * latent_dim:
            raise DataError(f"{path}: latent table size does not match the header")
        latents = LatentTable(ids, latent_dim)
        with torch.no_grad():
            latents.codes.weight.copy_(torch.from_numpy(values[pos:].copy()).reshape(n_latents, latent_dim))
    elif pos != len(values):
        raise DataError(f"{path} has trailing data")
    return Checkpoint(model, latents, meta)


# ─── Backend ─────────────────────────────────────────────────────────────


class NeuralODF(OdfBackend):
    """Query interface over a frozen model snapshot (and optional latent code)."""

    def __init__(self, model: OdfMLP, latent: torch.Tensor | np.ndarray | None = None,
                 domain: DomainConfig = DEFAULT_DOMAIN, chunk: int = 65536):
        self.model = model.eval()
        self.domain = domain
        self.chunk = chunk
        self.latent = None if latent is None else torch.as_tensor(latent, dtype=model.dtype).detach().clone()

    def batch_query(self, origins: np.ndarray, dirs: np.ndarray) -> OdfSamples:
        dirs = check_unit_dirs(dirs)
        origins = np.asarray(origins, dtype=np.float64)
        depth = np.empty(len(origins))
        conf = np.empty(len(origins))
        with torch.inference_mode():
            for s in range(0, len(origins), self.chunk):
                o = torch.as_tensor(origins[s:s + self.chunk], dtype=self.model.dtype)
                d = torch.as_tensor(dirs[s:s + self.chunk], dtype=self.model.dtype)
                # float32 rounding of unit vectors stays far below the model's tolerance
                pred = self.model(o, d, self.latent)
                depth[s:s + self.chunk] = pred.depth.double().numpy()
                conf[s:s + self.chunk] = pred.confidence.double().numpy()
        return OdfSamples(depth=depth, confidence=conf)
