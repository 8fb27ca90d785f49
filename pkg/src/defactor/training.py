"""Reconstruction losses and the staged training curriculum.

Training runs in four phases. A partial autoencoder (convolutions plus the
factorization heads, no sequence models) is pretrained first; the
aggregator and generator are then trained with teacher forcing while the
pretrained units stay fixed, the teacher signal is annealed away by
scheduled sampling, and finally everything trains end to end.

Epoch randomness (shuffles, permutations, sampling draws) is derived from
(seed, phase, epoch), so resuming from a checkpoint reproduces the run.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .chem import GraphTensors, MolecularGraph, tensorize
from .config import Config
from .decoder import ProbabilisticGraph, discretize
from .model import Autoencoder, ModelDims
from .tensor import (
    BadCheckpoint,
    ParameterStore,
    Tape,
    Tensor,
    add,
    clip,
    constant,
    log,
    mean_all,
    mul,
    sub,
    sum_all,
)

PROB_FLOOR = 1e-7


class EmptyDataset(ValueError):
    pass


class Phase(Enum):
    PretrainPartialAE = "PretrainPartialAE"
    TeacherForced = "TeacherForced"
    ScheduledSampling = "ScheduledSampling"
    EndToEnd = "EndToEnd"


_PHASE_STREAM = {
    Phase.PretrainPartialAE: 0,
    Phase.TeacherForced: 1,
    Phase.ScheduledSampling: 2,
    Phase.EndToEnd: 3,
}


@dataclass
class CurriculumState:
    phase: Phase
    mix_prob: float
    epoch: int


def scheduled_mix(epoch_in_phase: int, total_epochs: int) -> float:
    """Linear decay of the teacher probability from 1 toward 0."""
    if total_epochs <= 0:
        return 0.0
    return 1.0 - (epoch_in_phase + 1) / total_epochs


@dataclass
class ReconLoss:
    """Loss components as scalar tensors; ``total`` is their sum on the tape."""

    l_x: Tensor
    l_xbar: Tensor
    l_n: Tensor
    l_exist: Tensor
    total: Tensor

    def floats(self) -> dict[str, float]:
        return {
            "l_x": self.l_x.item(),
            "l_xbar": self.l_xbar.item(),
            "l_n": self.l_n.item(),
            "l_exist": self.l_exist.item(),
            "total": self.total.item(),
        }


def _clipped_log(t: Tensor) -> Tensor:
    return log(clip(t, PROB_FLOOR, 1.0 - PROB_FLOOR))


def recon_loss(pg: ProbabilisticGraph, target: GraphTensors, exist_targets: np.ndarray) -> ReconLoss:
    """Cross-entropy reconstruction loss with separate edge/non-edge normalization.

    Existing unordered pairs contribute a full per-type Bernoulli term,
    non-edges only the negative term, node rows a categorical term, and the
    keep probabilities a mean binary cross-entropy against
    ``exist_targets``. Probabilities are clamped to [1e-7, 1-1e-7] before
    the logs; the diagonal never enters any term.
    """
    n = target.n
    if pg.n != n:
        raise ValueError(f"probabilistic graph has {pg.n} nodes, target has {n}")
    if pg.exist.shape[0] != len(exist_targets):
        raise ValueError(
            f"exist length {pg.exist.shape[0]} does not match targets {len(exist_targets)}"
        )
    dtype = pg.nodes.data.dtype

    bonded = target.adjacency.sum(axis=2) > 0
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    edge_mask = (bonded & upper).astype(dtype)
    nonedge_mask = (~bonded & upper).astype(dtype)
    edge_pairs = float(edge_mask.sum())
    nonedge_pairs = float(nonedge_mask.sum())

    zero = constant(0.0, dtype=dtype)
    l_x = zero
    l_xbar = zero
    for k, probs in enumerate(pg.edges):
        target_k = constant(target.adjacency[:, :, k], dtype=dtype)
        log_p = _clipped_log(probs)
        log_q = _clipped_log(sub(1.0, probs))
        if edge_pairs > 0:
            bern = add(mul(target_k, log_p), mul(sub(1.0, target_k), log_q))
            l_x = add(l_x, sum_all(mul(constant(edge_mask, dtype=dtype), bern)))
        if nonedge_pairs > 0:
            l_xbar = add(l_xbar, sum_all(mul(constant(nonedge_mask, dtype=dtype), log_q)))
    if edge_pairs > 0:
        l_x = mul(l_x, -1.0 / edge_pairs)
    if nonedge_pairs > 0:
        l_xbar = mul(l_xbar, -1.0 / nonedge_pairs)

    node_target = constant(target.nodes, dtype=dtype)
    l_n = mul(sum_all(mul(node_target, _clipped_log(pg.nodes))), -1.0 / n)

    keep_target = constant(np.asarray(exist_targets, dtype=np.float64).reshape(-1, 1), dtype=dtype)
    keep_log_p = _clipped_log(pg.exist)
    keep_log_q = _clipped_log(sub(1.0, pg.exist))
    bce = add(mul(keep_target, keep_log_p), mul(sub(1.0, keep_target), keep_log_q))
    l_exist = mul(mean_all(bce), -1.0)

    total = add(add(add(l_x, l_xbar), l_n), l_exist)
    return ReconLoss(l_x, l_xbar, l_n, l_exist, total)


# -- partial autoencoder ------------------------------------------------------


def partial_forward(model: Autoencoder, gt: GraphTensors) -> ProbabilisticGraph:
    """Convolutions straight into the factorization heads; no sequence models."""
    embeds = model.encoder.node_embeddings(gt)
    heads = model.decoder.heads
    return ProbabilisticGraph(
        edges=heads.edge_probs(embeds),
        nodes=heads.node_probs(embeds),
        exist=heads.keep_probs(embeds),
    )


PARTIAL_PREFIXES = ("encoder.gcn.", "decoder.fact.")


def partial_parameter_names(store: ParameterStore) -> list[str]:
    return [n for n in store.names() if n.startswith(PARTIAL_PREFIXES)]


def _as_tensors(dataset: list[MolecularGraph]) -> list[GraphTensors]:
    if not dataset:
        raise EmptyDataset("dataset is empty")
    return [tensorize(g) for g in dataset]


def _epoch_rng(seed: int, phase: Phase, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, _PHASE_STREAM[phase], epoch])


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def _mean_losses(parts: list[ReconLoss]) -> Tensor:
    acc = parts[0].total
    for piece in parts[1:]:
        acc = add(acc, piece.total)
    return mul(acc, 1.0 / len(parts))


class _EpochStats:
    def __init__(self):
        self.sums = {"l_x": 0.0, "l_xbar": 0.0, "l_n": 0.0, "l_exist": 0.0, "total": 0.0}
        self.count = 0

    def update(self, losses: list[ReconLoss]) -> None:
        for loss in losses:
            for key, value in loss.floats().items():
                self.sums[key] += value
            self.count += 1

    def means(self) -> dict[str, float]:
        if self.count == 0:
            return {k: 0.0 for k in self.sums}
        return {k: v / self.count for k, v in self.sums.items()}


def pretrain_partial_ae(
    dataset: list[MolecularGraph],
    cfg: Config,
    epochs: int = 200,
    store: ParameterStore | None = None,
    start_epoch: int = 0,
    metrics: list | None = None,
) -> ParameterStore:
    """Train the partial autoencoder to reconstruct graphs from embeddings.

    Pass an existing ``store`` and ``start_epoch`` to resume; the epoch
    stream is keyed by absolute epoch index, so a resumed run matches an
    uninterrupted one exactly.
    """
    tensors = _as_tensors(dataset)
    if store is None:
        store = ParameterStore(seed=cfg.seed)
    model = Autoencoder(store, cfg.model_dims())
    trainable = partial_parameter_names(store)
    exist_ones = [np.ones(t.n) for t in tensors]

    for epoch in range(start_epoch, start_epoch + epochs):
        rng = _epoch_rng(cfg.seed, Phase.PretrainPartialAE, epoch)
        order = rng.permutation(len(tensors))
        stats = _EpochStats()
        for batch in _batches(order, cfg.batch):
            store.zero_grads()
            with Tape() as tape:
                losses = [recon_loss(partial_forward(model, tensors[i]), tensors[i], exist_ones[i]) for i in batch]
                batch_loss = _mean_losses(losses)
            tape.backward(batch_loss)
            store.adam_step(lr=cfg.lr, names=trainable)
            stats.update(losses)
        if metrics is not None:
            metrics.append(
                {
                    "epoch": epoch,
                    "phase": Phase.PretrainPartialAE.value,
                    "mix_prob": 1.0,
                    **stats.means(),
                    "recon_acc": 0.0,
                }
            )
    return store


# -- full curriculum ----------------------------------------------------------


def _full_forward(
    model: Autoencoder,
    gt: GraphTensors,
    embeds: Tensor,
    mix_prob: float,
    rng: np.random.Generator,
) -> ReconLoss:
    latent = model.encoder.aggregate(embeds, rng)
    pg = model.decoder.decode_training(latent, embeds, mix_prob, rng)
    exist_targets = np.concatenate([np.ones(gt.n), [0.0]])
    return recon_loss(pg, gt, exist_targets)


def train_autoencoder(
    dataset: list[MolecularGraph],
    partial_store: ParameterStore,
    cfg: Config,
    metrics: list | None = None,
) -> ParameterStore:
    """Run the teacher-forced, scheduled-sampling and end-to-end phases.

    ``partial_store`` must hold the pretrained convolution and
    factorization parameters; missing names raise
    :class:`~defactor.tensor.BadCheckpoint` when the model adopts the
    store. Per-epoch records are appended to ``metrics`` when given.
    """
    tensors = _as_tensors(dataset)
    store = partial_store
    for name in PARTIAL_PREFIXES:
        if not any(k.startswith(name) for k in store.names()):
            raise BadCheckpoint(f"checkpoint lacks pretrained parameters under {name!r}*")
    model = Autoencoder(store, cfg.model_dims())
    frozen = set(partial_parameter_names(store))
    all_names = set(store.names())

    schedule = [
        (Phase.TeacherForced, cfg.epochs_e1, lambda i: 1.0, True),
        (Phase.ScheduledSampling, cfg.epochs_e2, lambda i: scheduled_mix(i, cfg.epochs_e2), True),
        (Phase.EndToEnd, cfg.epochs_e3, lambda i: 0.0, False),
    ]
    for phase, epochs, mix_of, freeze in schedule:
        trainable = sorted(all_names - frozen) if freeze else sorted(all_names)
        for epoch in range(epochs):
            mix = mix_of(epoch)
            rng = _epoch_rng(cfg.seed, phase, epoch)
            order = rng.permutation(len(tensors))
            stats = _EpochStats()
            for batch in _batches(order, cfg.batch):
                store.zero_grads()
                if freeze:
                    # convolutions are fixed; keep them off the tape entirely
                    embeds_batch = [model.encoder.node_embeddings(tensors[i]) for i in batch]
                else:
                    embeds_batch = None
                with Tape() as tape:
                    losses = []
                    for pos, i in enumerate(batch):
                        embeds = (
                            embeds_batch[pos]
                            if embeds_batch is not None
                            else model.encoder.node_embeddings(tensors[i])
                        )
                        losses.append(_full_forward(model, tensors[i], embeds, mix, rng))
                    batch_loss = _mean_losses(losses)
                tape.backward(batch_loss)
                store.adam_step(lr=cfg.lr, names=trainable)
                stats.update(losses)
            if metrics is not None:
                report = reconstruction_accuracy(model, dataset, cfg.n_max)
                metrics.append(
                    {
                        "epoch": epoch,
                        "phase": phase.value,
                        "mix_prob": mix,
                        **stats.means(),
                        "recon_acc": report.overall,
                    }
                )
    return store


# -- evaluation ----------------------------------------------------------------


@dataclass
class ReconstructionReport:
    overall: float
    by_size: dict[int, tuple[int, int]]  # heavy-atom count -> (exact, total)

    def bucket_accuracies(self) -> dict[int, float]:
        return {k: exact / total for k, (exact, total) in self.by_size.items() if total}


def reconstruction_accuracy(
    model: Autoencoder, dataset: list[MolecularGraph], n_max: int
) -> ReconstructionReport:
    """Fraction of molecules reproduced exactly (same order, atoms, bonds)."""
    by_size: dict[int, tuple[int, int]] = {}
    exact_total = 0
    for g in dataset:
        decoded = model.reconstruct_molecule(g, n_max)
        hit = decoded == g
        exact_total += int(hit)
        old_exact, old_total = by_size.get(g.n, (0, 0))
        by_size[g.n] = (old_exact + int(hit), old_total + 1)
    overall = exact_total / len(dataset) if dataset else 0.0
    return ReconstructionReport(overall, dict(sorted(by_size.items())))
