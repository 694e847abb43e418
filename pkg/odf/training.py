"""Training loops: single-shape overfit, autodecoder, latent inference for unseen shapes."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from odf.domain import make_rng
from odf.errors import ConfigError, DataError, NumericalError
from odf.network import LatentTable, LossConfig, LossTerms, OdfMLP, odf_loss, save_checkpoint
from odf.sampling import RayDataset
from odf.storage import load_json, sidecar_path

logger = logging.getLogger(__name__)

MODES = ("overfit", "autodecoder")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 4096
    epochs: int = 100
    seed: int = 0
    mode: str = "overfit"
    holdout: float = 0.05
    latent_lr: float = 1e-3
    latent_epochs: int = 200
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be ≥ 1, got {self.batch_size}")
        if self.epochs < 0 or self.latent_epochs < 0:
            raise ConfigError("epoch counts must be ≥ 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if not 0 <= self.holdout < 1:
            raise ConfigError(f"holdout must be in [0, 1), got {self.holdout}")


@dataclass
class RayBatch:
    """Tensor view of labeled rays; `instance` indexes the latent table."""

    origins: torch.Tensor
    dirs: torch.Tensor
    depth: torch.Tensor
    hit: torch.Tensor
    instance: torch.Tensor | None = None

    def __len__(self) -> int:
        return len(self.depth)

    def take(self, idx: torch.Tensor) -> RayBatch:
        inst = None if self.instance is None else self.instance[idx]
        return RayBatch(self.origins[idx], self.dirs[idx], self.depth[idx], self.hit[idx], inst)


def to_batch(dataset: RayDataset, dtype: torch.dtype = torch.float32, instance: int | None = None) -> RayBatch:
    n = len(dataset)
    return RayBatch(
        torch.as_tensor(dataset.origins, dtype=dtype),
        torch.as_tensor(dataset.dirs, dtype=dtype),
        torch.as_tensor(dataset.depth, dtype=dtype),
        torch.as_tensor(dataset.hit, dtype=dtype),
        None if instance is None else torch.full((n,), instance, dtype=torch.long),
    )


def _cat(batches: list[RayBatch]) -> RayBatch:
    inst = None if batches[0].instance is None else torch.cat([b.instance for b in batches])
    return RayBatch(
        torch.cat([b.origins for b in batches]), torch.cat([b.dirs for b in batches]),
        torch.cat([b.depth for b in batches]), torch.cat([b.hit for b in batches]), inst,
    )


def split_holdout(dataset: RayDataset, fraction: float, seed: int) -> tuple[RayDataset, RayDataset | None]:
    """Deterministic train / held-out split."""
    n = len(dataset)
    n_held = int(round(fraction * n))
    if n_held == 0 or n_held >= n:
        return dataset, None
    perm = make_rng(seed, stream=7).permutation(n)
    return dataset.subset(np.sort(perm[n_held:])), dataset.subset(np.sort(perm[:n_held]))


def batch_loss(model: OdfMLP, batch: RayBatch, loss_cfg: LossConfig,
               latents: LatentTable | None = None, latent: torch.Tensor | None = None) -> LossTerms:
    if latents is not None and batch.instance is not None:
        codes = latents(batch.instance)
        used = latents(torch.unique(batch.instance))
        pred = model(batch.origins, batch.dirs, codes)
        return odf_loss(pred, batch.depth, batch.hit, loss_cfg, used)
    pred = model(batch.origins, batch.dirs, latent)
    return odf_loss(pred, batch.depth, batch.hit, loss_cfg, None if latent is None else latent[None])


def evaluate_loss(model: OdfMLP, batch: RayBatch, loss_cfg: LossConfig, latents: LatentTable | None = None,
                  latent: torch.Tensor | None = None, chunk: int = 65536) -> float:
    """Ray-weighted mean total loss, no gradients."""
    total = 0.0
    with torch.no_grad():
        for s in range(0, len(batch), chunk):
            part = batch.take(torch.arange(s, min(s + chunk, len(batch))))
            total += float(batch_loss(model, part, loss_cfg, latents, latent).total) * len(part)
    return total / max(len(batch), 1)


def backward(model: OdfMLP, batch: RayBatch, loss_cfg: LossConfig = LossConfig(),
             latents: LatentTable | None = None, latent: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of the batch loss for every parameter and active latent."""
    model.zero_grad(set_to_none=True)
    if latents is not None:
        latents.zero_grad(set_to_none=True)
    if latent is not None and latent.grad is not None:
        latent.grad = None
    terms = batch_loss(model, batch, loss_cfg, latents, latent)
    terms.total.backward()
    grads = {name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
             for name, p in model.named_parameters()}
    if latents is not None:
        grads["latents"] = latents.codes.weight.grad.clone()
    if latent is not None:
        grads["latent"] = latent.grad.clone()
    return grads


@dataclass
class TrainResult:
    model: OdfMLP
    latents: LatentTable | None
    history: list[dict] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]["train_loss"] if self.history else math.nan


def _epoch_order(n: int, seed: int, epoch: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed) * 1_000_003 + epoch)
    return torch.randperm(n, generator=gen)


def _check_finite(terms: LossTerms, epoch: int, step: int):
    if not torch.isfinite(terms.total):
        raise NumericalError(
            f"non-finite loss at epoch {epoch}, step {step}: "
            + ", ".join(f"{k}={v:.4g}" for k, v in terms.as_floats().items())
        )


def train(model: OdfMLP, data: RayDataset | dict[str, RayDataset], cfg: TrainConfig = TrainConfig(),
          loss_cfg: LossConfig = LossConfig(), latents: LatentTable | None = None,
          checkpoint: str | Path | None = None, start_epoch: int = 0,
          manifest: dict | None = None) -> TrainResult:
    """Optimize weights (and latent codes in autodecoder mode) with Adam.

    `data` is one dataset in overfit mode or {instance id: dataset} in
    autodecoder mode. Training never uses recursion. Passing `start_epoch`
    resumes a run: epochs [start_epoch, cfg.epochs) are trained.
    """
    dtype = model.dtype
    if cfg.mode == "overfit":
        if not isinstance(data, RayDataset):
            raise ConfigError("overfit mode trains on a single ray dataset")
        if model.cfg.latent_dim:
            raise ConfigError("overfit mode needs a model with latent_dim 0")
        datasets = {"shape": data}
    else:
        if isinstance(data, RayDataset) or not data:
            raise ConfigError("autodecoder mode trains on {instance id: dataset}")
        if not model.cfg.latent_dim:
            raise ConfigError("autodecoder mode needs a model with latent_dim > 0")
        datasets = dict(data)
        if latents is None:
            latents = LatentTable(list(datasets), model.cfg.latent_dim, seed=cfg.seed, dtype=dtype)
        elif latents.ids != list(datasets):
            raise DataError("latent table ids do not match the training instances")

    train_parts, held_parts = [], []
    for i, (name, ds) in enumerate(datasets.items()):
        tr, held = split_holdout(ds, cfg.holdout, cfg.seed + i)
        inst = i if cfg.mode == "autodecoder" else None
        train_parts.append(to_batch(tr, dtype, inst))
        if held is not None:
            held_parts.append(to_batch(held, dtype, inst))
    train_batch = _cat(train_parts)
    held_batch = _cat(held_parts) if held_parts else None

    groups = [{"params": list(model.parameters()), "lr": cfg.lr}]
    if latents is not None:
        groups.append({"params": list(latents.parameters()), "lr": cfg.latent_lr})
    optimizer = torch.optim.Adam(groups, betas=cfg.betas)
    if checkpoint is not None and start_epoch > 0:
        state = Path(str(checkpoint) + ".optim")
        if state.exists():
            optimizer.load_state_dict(torch.load(state))

    result = TrainResult(model, latents)
    prior = load_json(sidecar_path(checkpoint)) if checkpoint is not None and start_epoch > 0 else {}
    resumed = {"epoch": start_epoch, "train_loss": prior.get("train_loss"), "heldout_loss": prior.get("heldout_loss")}
    model.train()
    held0 = evaluate_loss(model, held_batch, loss_cfg, latents) if held_batch is not None else None
    if held0 is not None:
        logger.info("Initial held-out loss %.6f (%d rays)", held0, len(held_batch))

    for epoch in range(start_epoch, cfg.epochs):
        order = _epoch_order(len(train_batch), cfg.seed, epoch)
        total, seen = 0.0, 0
        for step, s in enumerate(range(0, len(order), cfg.batch_size)):
            batch = train_batch.take(order[s:s + cfg.batch_size])
            terms = batch_loss(model, batch, loss_cfg, latents)
            _check_finite(terms, epoch, step)
            optimizer.zero_grad(set_to_none=True)
            terms.total.backward()
            optimizer.step()
            total += float(terms.total.detach()) * len(batch)
            seen += len(batch)
        row = {"epoch": epoch + 1, "train_loss": total / max(seen, 1)}
        if held_batch is not None:
            row["heldout_loss"] = evaluate_loss(model, held_batch, loss_cfg, latents)
        result.history.append(row)
        logger.info("epoch %d/%d  loss %.6f%s", epoch + 1, cfg.epochs, row["train_loss"],
                    f"  held-out {row['heldout_loss']:.6f}" if "heldout_loss" in row else "")
        if checkpoint is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            _save(checkpoint, result, optimizer, cfg, loss_cfg, datasets, held0, manifest, resumed)

    model.eval()
    if checkpoint is not None:
        _save(checkpoint, result, optimizer, cfg, loss_cfg, datasets, held0, manifest, resumed)
    return result


def _save(path, result: TrainResult, optimizer, cfg: TrainConfig, loss_cfg: LossConfig,
          datasets: dict[str, RayDataset], held0: float | None, manifest: dict | None,
          resumed: dict | None = None):
    # a run with no epochs left keeps the epoch and losses it resumed from
    last = result.history[-1] if result.history else (resumed or {})
    meta = {
        "train": asdict(cfg),
        "loss": asdict(loss_cfg),
        "dataset_hashes": {name: ds.content_hash() for name, ds in datasets.items()},
        "epoch": last.get("epoch", 0),
        "train_loss": last.get("train_loss"),
        "heldout_loss": last.get("heldout_loss"),
        "initial_heldout_loss": held0,
    }
    meta.update(manifest or {})
    save_checkpoint(path, result.model, result.latents, meta)
    torch.save(optimizer.state_dict(), str(path) + ".optim")


def resume_epoch(path: str | Path) -> int:
    """Epoch recorded in a checkpoint manifest (0 when unknown)."""
    return int(load_json(sidecar_path(path)).get("epoch", 0) or 0)


def infer_latent(model: OdfMLP, dataset: RayDataset | None, cfg: TrainConfig = TrainConfig(),
                 loss_cfg: LossConfig = LossConfig(), init: torch.Tensor | None = None) -> tuple[torch.Tensor, float]:
    """Fit a new latent code to rays of an unseen shape; network weights stay frozen."""
    if dataset is None or len(dataset) == 0:
        raise DataError("latent inference needs at least one ray")
    if not model.cfg.latent_dim:
        raise ConfigError("latent inference needs an autodecoder model")
    dtype = model.dtype
    batch = to_batch(dataset, dtype)
    if init is None:
        gen = torch.Generator().manual_seed(cfg.seed)
        init = torch.randn(model.cfg.latent_dim, generator=gen, dtype=dtype) * 0.01
    latent = init.detach().clone().to(dtype).requires_grad_(True)
    optimizer = torch.optim.Adam([latent], lr=cfg.latent_lr, betas=cfg.betas)

    frozen = [p.requires_grad for p in model.parameters()]
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    try:
        for epoch in range(cfg.latent_epochs):
            order = _epoch_order(len(batch), cfg.seed, epoch)
            for step, s in enumerate(range(0, len(order), cfg.batch_size)):
                terms = batch_loss(model, batch.take(order[s:s + cfg.batch_size]), loss_cfg, latent=latent)
                _check_finite(terms, epoch, step)
                optimizer.zero_grad(set_to_none=True)
                terms.total.backward()
                optimizer.step()
    finally:
        for p, flag in zip(model.parameters(), frozen):
            p.requires_grad_(flag)
    final = evaluate_loss(model, batch, loss_cfg, latent=latent.detach())
    logger.info("Latent inference: %d rays, %d epochs, loss %.6f", len(batch), cfg.latent_epochs, final)
    return latent.detach(), final
