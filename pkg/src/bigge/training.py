"""Training loop, learning-rate and loss-weight schedules, checkpoints."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .adj_lstm import AdjLstm, AdjLstmConfig
from .datasets import stream_rng
from .graph import WeightedGraph
from .model import BiggE, BiggEConfig
from .nn import ParameterStore, adam_step, load_checkpoint, save_checkpoint, store_from_arrays
from .weights import WeightStandardizer

__all__ = ["TrainConfig", "Trainer", "make_model", "load_model", "save_model", "MODEL_KINDS"]

MODEL_KINDS = ("bigg-e", "adj-lstm")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    lr_plateau: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay_topo: float = 1e-4
    weight_decay_wt: float = 1e-3
    plateau_epoch_topo: int | None = None
    plateau_epoch_wt: int | None = None
    lam_w: float = 0.1
    lam_w_plateau: float = 0.01
    alternate: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def make_model(kind: str, params: dict, train: Sequence[WeightedGraph] = (), seed: int = 0,
               dtype: torch.dtype = torch.float64):
    """Fresh model whose weight standardizer and weight-head biases come from ``train``."""
    w = np.concatenate([g.weights for g in train]) if train else np.zeros(0)
    std = WeightStandardizer.fit(w)
    params = dict(params, wt_mean=std.mean, wt_sd=std.sd)
    init_rng_seed = int(stream_rng(seed, "init").integers(2**63 - 1))
    if kind == "bigg-e":
        model = BiggE(BiggEConfig(**params), seed=init_rng_seed, dtype=dtype)
    elif kind == "adj-lstm":
        model = AdjLstm(AdjLstmConfig(**params), seed=init_rng_seed, dtype=dtype)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    model.init_weight_heads(w)
    return model


def _model_from(kind: str, config: dict, store: ParameterStore):
    if kind == "bigg-e":
        return BiggE(BiggEConfig(**config), store=store)
    if kind == "adj-lstm":
        return AdjLstm(AdjLstmConfig(**config), store=store)
    raise ValueError(f"unknown model kind {kind!r}")


def _kind_of(model) -> str:
    return "bigg-e" if isinstance(model, BiggE) else "adj-lstm"


def save_model(path: str | Path, model, extra: dict | None = None) -> None:
    header = {"model": _kind_of(model), "config": model.config.to_dict(), "adam_step": model.store.step}
    header.update(extra or {})
    save_checkpoint(path, header, model.store.state_arrays())


def load_model(path: str | Path, dtype: torch.dtype = torch.float64):
    header, arrays = load_checkpoint(path)
    store = store_from_arrays(arrays, header.get("adam_step", 0), dtype)
    return _model_from(header["model"], header["config"], store), header


class Trainer:
    """Mini-batch Adam with per-group learning rates, decay and a ``lam_w`` schedule.

    Batches in epoch ``e`` follow a permutation drawn from the ``train``
    stream with counter ``e``, so a run resumed from an epoch checkpoint
    replays exactly the batches of an uninterrupted run.
    """

    def __init__(self, model, graphs: Sequence[WeightedGraph], config: TrainConfig, seed: int = 0,
                 log_path: str | Path | None = None):
        if not graphs:
            raise ValueError("empty training set")
        self.model = model
        self.graphs = list(graphs)
        self.config = config
        self.seed = seed
        self.log_path = Path(log_path) if log_path else None
        self.epoch = 0
        self.history: list[dict] = []

    # ------------------------------------------------------------ schedules

    def lr_for(self, group: str, epoch: int) -> float:
        c = self.config
        plateau = c.plateau_epoch_wt if group == "wt" else c.plateau_epoch_topo
        return c.lr_plateau if plateau is not None and epoch >= plateau else c.lr

    def lam_w(self, epoch: int) -> float:
        c = self.config
        done = (c.plateau_epoch_topo is not None and epoch >= c.plateau_epoch_topo
                and c.plateau_epoch_wt is not None and epoch >= c.plateau_epoch_wt)
        return c.lam_w_plateau if done else c.lam_w

    def _group(self, name: str) -> str:
        return "wt" if self.model.is_weight_param(name) else "topo"

    # ------------------------------------------------------------ steps

    def _grad_norms(self) -> dict:
        sq = {"topo": 0.0, "wt": 0.0}
        for name, p in self.model.store.params.items():
            if p.grad is not None:
                sq[self._group(name)] += float((p.grad.detach() ** 2).sum())
        return {k: math.sqrt(v) for k, v in sq.items()}

    def _update(self, epoch: int, names: list[str] | None = None) -> None:
        c = self.config
        adam_step(
            self.model.store,
            lr=lambda n: self.lr_for(self._group(n), epoch),
            betas=c.betas,
            eps=c.eps,
            weight_decay=lambda n: c.weight_decay_wt if self._group(n) == "wt" else c.weight_decay_topo,
            names=names,
        )

    def step(self, batch: Sequence[WeightedGraph], epoch: int) -> dict:
        lam = self.lam_w(epoch)
        store = self.model.store
        if not self.config.alternate:
            store.zero_grad()
            loss, out = self.model.loss(batch, lam)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"nonfinite loss at epoch {epoch}")
            loss.backward()
            norms = self._grad_norms()
            self._update(epoch)
        else:
            topo_names = [n for n in store.names() if self._group(n) == "topo"]
            wt_names = [n for n in store.names() if self._group(n) == "wt"]
            store.zero_grad()
            out = self.model.forward(batch)
            topo_loss = -out["topo_ll"].sum()
            if not torch.isfinite(topo_loss):
                raise FloatingPointError(f"nonfinite loss at epoch {epoch}")
            topo_loss.backward()
            norms = self._grad_norms()
            self._update(epoch, topo_names)
            out2 = self.model.forward(batch)
            wt_loss = -lam * out2["wt_ll"].sum()
            if not torch.isfinite(wt_loss):
                raise FloatingPointError(f"nonfinite loss at epoch {epoch}")
            wt_loss.backward()
            norms["wt"] = self._grad_norms()["wt"]
            self._update(epoch, wt_names)
            loss = topo_loss + wt_loss
        stats = {
            "loss": float(loss.detach()),
            "topo_nll": -float(out["topo_ll"].detach().sum()),
            "wt_nll": -float(out["wt_ll"].detach().sum()),
            "grad_norm_topo": norms["topo"],
            "grad_norm_wt": norms["wt"],
        }
        if "stages" in out:
            stats["stages"] = out["stages"]["critical_path"]
        return stats

    def run_epoch(self) -> dict:
        epoch = self.epoch
        rng = stream_rng(self.seed, "train", epoch)
        order = rng.permutation(len(self.graphs))
        bs = self.config.batch_size
        totals = {"loss": 0.0, "topo_nll": 0.0, "wt_nll": 0.0}
        gn_topo = gn_wt = 0.0
        stages = 0
        for start in range(0, len(order), bs):
            batch = [self.graphs[i] for i in order[start:start + bs]]
            s = self.step(batch, epoch)
            for k in totals:
                totals[k] += s[k]
            gn_topo = max(gn_topo, s["grad_norm_topo"])
            gn_wt = max(gn_wt, s["grad_norm_wt"])
            stages = max(stages, s.get("stages", 0))
        count = len(self.graphs)
        record = {
            "epoch": epoch + 1,
            "loss": totals["loss"] / count,
            "topo_nll": totals["topo_nll"] / count,
            "wt_nll": totals["wt_nll"] / count,
            "max_grad_norm_topo": gn_topo,
            "max_grad_norm_wt": gn_wt,
            "lr_topo": self.lr_for("topo", epoch),
            "lr_wt": self.lr_for("wt", epoch),
            "lam_w": self.lam_w(epoch),
        }
        if isinstance(self.model, BiggE):
            record["stages"] = stages
        self.epoch += 1
        self.history.append(record)
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
        return record

    def train(self, epochs: int | None = None, on_epoch: Callable[[dict], None] | None = None) -> list[dict]:
        target = self.config.epochs if epochs is None else epochs
        while self.epoch < target:
            rec = self.run_epoch()
            if on_epoch:
                on_epoch(rec)
        return self.history

    def training_nll(self) -> float:
        """Mean negative log-likelihood per graph (topology plus weights) under current parameters."""
        total = 0.0
        with torch.no_grad():
            for start in range(0, len(self.graphs), self.config.batch_size):
                out = self.model.forward(self.graphs[start:start + self.config.batch_size])
                total -= float(out["topo_ll"].sum() + out["wt_ll"].sum())
        return total / len(self.graphs)

    def save(self, path: str | Path) -> None:
        save_model(path, self.model, {"epoch": self.epoch, "seed": self.seed, "train": self.config.to_dict()})
