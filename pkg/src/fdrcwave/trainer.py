"""Unsupervised training loop: pool -> network -> residual loss -> Adam.

Each step samples a batch of domains, predicts their next states, scores the
finite-difference residuals of those predictions (no labels anywhere), applies
one Adam update, and writes the predictions back into the pool.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import io
from .fdm import cfl_number, check_cfl
from .fdrc import grad_fields, masked_mean_sq, residual_fields
from .grid import DomainSpec, WaveState, source_value
from .nn import ModelParams, backward, forward, init_params
from .optim import AdamState, adam_step, init_adam, lr_schedule
from .pool import TrainingPool, init_pool, sample_batch, write_back

METRICS_HEADER = ("epoch", "batch", "L_u", "L_v", "L_p", "total", "lr", "wall_time_s")


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries the offending pool entry for diagnosis."""

    def __init__(self, entry_index: int, state: WaveState):
        super().__init__(
            f"non-finite loss from pool entry {entry_index} at step {state.step}"
        )
        self.entry_index = entry_index
        self.state = state


@dataclass
class TrainConfig:
    spec: DomainSpec
    pool_size: int = 1000
    batch_size: int = 50
    samples_per_epoch: int = 10000
    epochs: int = 200
    reset_prob: float = 0.005
    seed: int = 0
    precision: str = "single"
    checkpoint_dir: str = "checkpoints"
    metrics_path: str = "metrics.csv"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.samples_per_epoch % self.batch_size != 0:
            raise ValueError(
                f"samples_per_epoch={self.samples_per_epoch} is not a whole number "
                f"of batches of {self.batch_size}"
            )
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    @property
    def batches_per_epoch(self) -> int:
        return self.samples_per_epoch // self.batch_size


@dataclass
class MetricsRecord:
    epoch: int
    batch: int
    L_u: float
    L_v: float
    L_p: float
    total: float
    lr: float
    wall_time: float

    def csv_row(self):
        return (
            str(self.epoch),
            str(self.batch),
            f"{self.L_u:.17g}",
            f"{self.L_v:.17g}",
            f"{self.L_p:.17g}",
            f"{self.total:.17g}",
            f"{self.lr:.17g}",
            f"{self.wall_time:.6f}",
        )


def read_metrics(path) -> list[MetricsRecord]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(
                MetricsRecord(
                    int(row["epoch"]), int(row["batch"]),
                    float(row["L_u"]), float(row["L_v"]), float(row["L_p"]),
                    float(row["total"]), float(row["lr"]), float(row["wall_time_s"]),
                )
            )
    return records


def train_step(
    pool: TrainingPool,
    params: ModelParams,
    adam: AdamState,
    spec: DomainSpec,
    lr: float,
    batch_size: int = 50,
    epoch: int = 0,
    batch: int = 0,
):
    """One batch: predict, score residuals, update parameters, write back.

    Returns (params', adam', pool', MetricsRecord)."""
    t0 = time.perf_counter()
    idx, entries = sample_batch(pool, batch_size)
    dt = spec.dt
    dtype = params.dtype

    U = np.stack([e.state.u for e in entries])
    V = np.stack([e.state.v for e in entries])
    P = np.stack([e.state.p for e in entries])
    SIG = np.stack([e.sigma for e in entries])
    X = np.stack([U, V, P, SIG * dt], axis=1).astype(dtype, copy=False)

    delta, cache = forward(params, X)
    uh = U + delta[:, 0]
    vh = V + delta[:, 1]
    ph = P + delta[:, 2]

    # hard sources: overwrite predicted p at the new time, drop those cells
    # from the loss (the discrete equations do not hold where p is prescribed)
    masks = np.ones(U.shape, dtype=bool)
    for b, e in enumerate(entries):
        t_new = (e.state.step + 1) * dt
        for s in e.sources:
            ph[(b, *s.cells)] = source_value(s, t_new)
            masks[(b, *s.cells)] = False

    n_unmasked = masks.sum(axis=(-2, -1))
    r_u, r_v, r_p = residual_fields(U, V, P, uh, vh, ph, SIG, spec)
    l_u = masked_mean_sq(r_u, masks, n_unmasked)
    l_v = masked_mean_sq(r_v, masks, n_unmasked)
    l_p = masked_mean_sq(r_p, masks, n_unmasked)
    totals = l_u + l_v + l_p
    if not np.isfinite(totals).all():
        bad = int(np.argmax(~np.isfinite(totals)))
        raise TrainingDivergedError(int(idx[bad]), entries[bad].state)

    g_u, g_v, g_p = grad_fields(U, V, P, uh, vh, ph, SIG, spec, masks)
    grad_delta = np.stack([g_u, g_v, g_p], axis=1) / len(entries)
    grads = backward(params, cache, grad_delta)
    params2, adam2 = adam_step(params, grads, adam, lr)

    new_states = [
        WaveState(uh[b], vh[b], ph[b], entries[b].state.step + 1)
        for b in range(len(entries))
    ]
    pool2 = write_back(pool, idx, new_states)

    rec = MetricsRecord(
        epoch=epoch,
        batch=batch,
        L_u=float(l_u.mean()),
        L_v=float(l_v.mean()),
        L_p=float(l_p.mean()),
        total=float(l_u.mean()) + float(l_v.mean()) + float(l_p.mean()),
        lr=lr,
        wall_time=time.perf_counter() - t0,
    )
    return params2, adam2, pool2, rec


def _checkpoint_dir(config: TrainConfig, epoch: int) -> Path:
    return Path(config.checkpoint_dir) / f"epoch_{epoch:04d}"


def save_training_checkpoint(
    config: TrainConfig, epoch: int, params, adam, pool, rng
) -> Path:
    out = _checkpoint_dir(config, epoch)
    out.mkdir(parents=True, exist_ok=True)
    io.write_model(out / "model.wnet", params, adam)
    io.write_pool(out / "pool.wpol", pool)
    meta = {
        "epoch": epoch,
        "seed": config.seed,
        "precision": config.precision,
        "rng_state": rng.bit_generator.state,
    }
    (out / "trainer.json").write_text(json.dumps(meta), encoding="utf-8")
    return out


def load_training_checkpoint(path, spec: DomainSpec, reset_prob: float, **domain_kwargs):
    """Returns (epoch, params, adam, pool, rng) from an epoch directory."""
    path = Path(path)
    meta = json.loads((path / "trainer.json").read_text(encoding="utf-8"))
    params, adam = io.read_model(path / "model.wnet")
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    pool = io.read_pool(path / "pool.wpol", spec, rng, **domain_kwargs)
    pool.reset_prob = reset_prob
    return int(meta["epoch"]), params, adam, pool, rng


def train(config: TrainConfig, resume=None, log=None) -> ModelParams:
    """Run the full loop; checkpoints every epoch, metrics appended per batch.

    `resume` names an epoch checkpoint directory; training continues with the
    next epoch and, in reproducible mode, matches an uninterrupted run bit for
    bit."""
    spec = config.spec
    if not check_cfl(spec):
        raise ValueError(
            f"CFL number {cfl_number(spec):.6g} exceeds 1; config is unstable"
        )
    if resume is None:
        rng = np.random.default_rng(config.seed)
        params = init_params(rng, dtype=config.dtype)
        adam = init_adam(params)
        pool = init_pool(
            config.pool_size, spec, config.reset_prob, rng, dtype=config.dtype
        )
        start_epoch = 0
    else:
        start_epoch, params, adam, pool, rng = load_training_checkpoint(
            resume, spec, config.reset_prob
        )

    metrics_path = Path(config.metrics_path)
    if metrics_path.parent != Path(""):
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not metrics_path.exists()
    with open(metrics_path, "a", newline="") as mf:
        writer = csv.writer(mf)
        if new_file:
            writer.writerow(METRICS_HEADER)
        for epoch in range(start_epoch + 1, config.epochs + 1):
            lr = lr_schedule(epoch)
            epoch_total = 0.0
            t0 = time.perf_counter()
            for b in range(1, config.batches_per_epoch + 1):
                try:
                    params, adam, pool, rec = train_step(
                        pool, params, adam, spec, lr,
                        batch_size=config.batch_size, epoch=epoch, batch=b,
                    )
                except TrainingDivergedError as err:
                    dump = Path(config.checkpoint_dir)
                    dump.mkdir(parents=True, exist_ok=True)
                    io.write_snapshot(
                        dump / f"diverged_entry_{err.entry_index}.wfld", err.state
                    )
                    raise
                writer.writerow(rec.csv_row())
                epoch_total += rec.total
            mf.flush()
            save_training_checkpoint(config, epoch, params, adam, pool, rng)
            if log is not None:
                log(
                    f"epoch {epoch}/{config.epochs}: mean total loss "
                    f"{epoch_total / config.batches_per_epoch:.6g}, lr {lr:g}, "
                    f"{time.perf_counter() - t0:.1f}s"
                )
    return params
