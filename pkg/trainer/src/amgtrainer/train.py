"""Training loop and the amgtrain command line.

One optimization step backpropagates the mean cycle loss of an operator
batch (default 8 samples, each with its own hierarchy and rhs batch).
After every epoch the mean loss on a held-out validation split is
recorded, and the weights of the best validation epoch are what get
written out, in the weight-directory format the solver loads.
"""
import argparse
import copy
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .cycle import error_cycle, relative_loss
from .errors import DataError, NumericError, UsageError
from .formats import (is_validation_seed, read_sample, scan_dataset,
                      write_weights)
from .model import CorrectionNet, SampleTensors, numpy_weights, sample_tensors


@dataclass
class TrainConfig:
    optimizer: str = "adam"  # or "sgd"
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    epochs: int = 30
    operator_batch: int = 8
    rhs_batch: int = 64
    sweeps: int = 2  # smoothing sweeps each side of the training cycle
    coarse_sweeps: int = 2
    omega: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise UsageError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.epochs < 1 or self.operator_batch < 1 or self.rhs_batch < 1:
            raise UsageError("epochs and batch sizes must be >= 1")
        if self.learning_rate <= 0:
            raise UsageError("learning rate must be positive")


@dataclass
class TrainResult:
    best_epoch: int
    best_val_loss: float
    history: List[dict]  # epoch, train_loss, val_loss
    skipped_steps: int


def sample_loss(model: CorrectionNet, st: SampleTensors,
                cfg: TrainConfig) -> torch.Tensor:
    cv = model.augment(st)
    e_hat = error_cycle(st, cv, st.residuals, sweeps=cfg.sweeps,
                        omega=cfg.omega, coarse_sweeps=cfg.coarse_sweeps)
    return relative_loss(e_hat, st.errors)


def _mean_loss(model: CorrectionNet, batch: List[SampleTensors],
               cfg: TrainConfig) -> torch.Tensor:
    total = None
    for st in batch:
        term = sample_loss(model, st, cfg)
        total = term if total is None else total + term
    return total / len(batch)


def load_split(data_dir, cfg: TrainConfig, log=print):
    """Read every sample, split 10% to validation by seed hash."""
    tensors = [sample_tensors(read_sample(p), rhs_limit=cfg.rhs_batch)
               for p in scan_dataset(data_dir)]
    train = [t for t in tensors if not is_validation_seed(t.problem_seed)]
    val = [t for t in tensors if is_validation_seed(t.problem_seed)]
    if not train:
        raise UsageError("every sample landed in the validation split")
    if not val:
        # tiny datasets can miss the 10% bucket entirely
        val = [train[-1]]
        log("validation split is empty; reusing the last training sample")
    return train, val


def train(data_dir, out_dir, cfg: TrainConfig, log=print) -> TrainResult:
    torch.manual_seed(cfg.seed)
    model = CorrectionNet()
    train_set, val_set = load_split(data_dir, cfg, log=log)
    log(f"{len(train_set)} training / {len(val_set)} validation samples, "
        f"{model.n_params} parameters")

    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                               weight_decay=cfg.weight_decay)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate,
                              weight_decay=cfg.weight_decay)

    order = np.arange(len(train_set))
    rng = np.random.default_rng(cfg.seed)
    best_val = float("inf")
    best_epoch = -1
    best_state = copy.deepcopy(model.state_dict())
    history: List[dict] = []
    skipped = 0

    for epoch in range(cfg.epochs):
        model.train()
        rng.shuffle(order)
        losses = []
        for lo in range(0, len(order), cfg.operator_batch):
            batch = [train_set[i] for i in order[lo:lo + cfg.operator_batch]]
            opt.zero_grad()
            try:
                loss = _mean_loss(model, batch, cfg)
                loss.backward()
            except NumericError as exc:
                skipped += 1
                log(f"epoch {epoch}: skipping step ({exc})")
                continue
            finite = all(p.grad is None or bool(torch.isfinite(p.grad).all())
                         for p in model.parameters())
            if not finite:
                skipped += 1
                log(f"epoch {epoch}: skipping step (non-finite gradients)")
                continue
            opt.step()
            losses.append(float(loss.detach()))

        model.eval()
        with torch.no_grad():
            val_loss = float(np.mean(
                [float(sample_loss(model, st, cfg)) for st in val_set]))
        train_loss = float(np.mean(losses)) if losses else float("nan")
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss})
        marker = ""
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            marker = " *"
        log(f"epoch {epoch}: train {train_loss:.6f} val {val_loss:.6f}{marker}")

    if best_epoch < 0:
        raise NumericError("no epoch produced a finite validation loss")
    model.load_state_dict(best_state)
    out = Path(out_dir)
    write_weights(numpy_weights(model), out)
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{h['epoch']},{h['train_loss']:.10e},{h['val_loss']:.10e}"
              for h in history]
    (out / "val_log.csv").write_text("\n".join(lines) + "\n")
    log(f"best epoch {best_epoch} (val {best_val:.6f}); weights in {out}")
    return TrainResult(best_epoch, best_val, history, skipped)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="amgtrain",
        description="Train correction-network weights on exported samples")
    p.add_argument("--data", required=True, help="directory of sample dirs")
    p.add_argument("--out", required=True, help="weight output directory")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--operator-batch", type=int, default=8)
    p.add_argument("--rhs-batch", type=int, default=64)
    p.add_argument("--sweeps", type=int, default=2)
    p.add_argument("--omega", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    a = build_parser().parse_args(argv)
    if a.threads is not None:
        torch.set_num_threads(a.threads)
    try:
        cfg = TrainConfig(optimizer=a.optimizer, learning_rate=a.lr,
                          weight_decay=a.weight_decay, epochs=a.epochs,
                          operator_batch=a.operator_batch,
                          rhs_batch=a.rhs_batch, sweeps=a.sweeps,
                          omega=a.omega, seed=a.seed)
        train(a.data, a.out, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
