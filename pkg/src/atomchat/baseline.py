"""Plain encoder-decoder baseline trained directly on p(response | post).

Used for comparison runs only: it reuses the exact encoder, decoder and
beam-search code paths of the mechanism-aware model, conditioning the
decoder on the raw encoder context with no composer in between.
Generation is a single-stage token beam returning the top-K sequences.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .errors import ContractError, NumericError
from .params import ParameterStore, adadelta_step
from .seqmodel import encode, response_log_likelihood, token_beam
from .training import TrainConfig, _init_decoder, _init_encoder, early_stop
from .vocab import Vocab


@dataclass
class BaselineState:
    encoder: object
    decoder: object


def init_baseline(config, vocab_size, rng):
    store = ParameterStore()
    e, h, r = config.embed_dim, config.hidden_dim, config.init_range
    state = BaselineState(
        encoder=_init_encoder(store, "baseline.enc", vocab_size, e, h, rng, r),
        decoder=_init_decoder(store, "baseline.dec", vocab_size, e, h, h, rng, r),
    )
    return state, store


def baseline_update(state, batch, store, rho=0.95, eps=1e-6):
    """One step minimizing the summed per-token negative log-likelihood."""
    if not batch:
        raise ContractError("baseline_update: empty batch")
    loss = None
    for x, y, _ in batch:
        ll = response_log_likelihood(state.decoder, encode(state.encoder, x), y)
        term = ad.scale(ll, -1.0 / len(y))
        loss = term if loss is None else loss + term
    loss_value = loss.item()
    if not np.isfinite(loss_value):
        raise NumericError(f"non-finite baseline loss: {loss_value}")
    store.zero_grads("baseline.")
    ad.backward(loss)
    adadelta_step(store, "baseline.", rho=rho, eps=eps)
    return loss_value


def baseline_validation(state, instances):
    if not instances:
        return float("nan")
    total = 0.0
    with ad.no_grad():
        for x, y, _ in instances:
            total += -response_log_likelihood(state.decoder, encode(state.encoder, x), y).item() / len(y)
    return total / len(instances)


@dataclass
class BaselineEpochRecord:
    epoch: int
    train_loss: float
    val_nll: float
    wall_time_s: float

    def log_fields(self):
        return {"epoch": self.epoch, "train_loss": self.train_loss, "val_nll": self.val_nll}


@dataclass
class BaselineResult:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = "epoch-cap"
    state: BaselineState = None
    store: ParameterStore = None


def run_baseline_training(config, train_instances, val_instances, vocab, checkpoint_path=None, log_path=None):
    """Train the baseline with the same schedule, early stop and persistence as the main model."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    state, store = init_baseline(config, len(vocab), rng)
    if not val_instances:
        val_instances = train_instances
    meta = {"kind": "baseline", "config": config.to_dict(), "vocab": list(vocab.tokens)}
    result = BaselineResult(state=state, store=store)
    if checkpoint_path is not None and config.epochs == 0:
        save_checkpoint(checkpoint_path, store, meta)
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        epoch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch, 0]))
        order = epoch_rng.permutation(len(train_instances))
        loss_sum, n_batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_instances[i] for i in order[start : start + config.batch_size]]
            loss_sum += baseline_update(state, batch, store, config.rho, config.eps) / len(batch)
            n_batches += 1
        record = BaselineEpochRecord(
            epoch=epoch,
            train_loss=loss_sum / n_batches,
            val_nll=baseline_validation(state, val_instances),
            wall_time_s=time.perf_counter() - started,
        )
        result.records.append(record)
        history = [r.val_nll for r in result.records]
        stop, best_index = early_stop(history, config.patience)
        if best_index == len(history) - 1:
            result.best_epoch = epoch
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, store, meta)
        if stop:
            result.stop_reason = "early-stop"
            break
    if log_path is not None:
        events = [{"event": "stop", "reason": result.stop_reason, "best_epoch": result.best_epoch}]
        with open(log_path, "w", encoding="utf-8") as f:
            for record in result.records:
                f.write(json.dumps(record.log_fields(), sort_keys=True) + "\n")
            for event in events:
                f.write(json.dumps(event, sort_keys=True) + "\n")
    return result


def baseline_generate(state, x, k, width, max_len):
    """Top-K responses from a single-stage token beam over p(y | post)."""
    with ad.no_grad():
        c = encode(state.encoder, x)
    return token_beam(state.decoder, c, max(k, width), max_len)[:k]


def load_baseline_checkpoint(path):
    meta, entries = load_checkpoint(path)
    if meta.get("kind") != "baseline":
        raise ContractError(f"checkpoint kind {meta.get('kind')!r}, expected 'baseline'")
    config = TrainConfig(**meta["config"])
    vocab = Vocab(meta["vocab"])
    state, store = init_baseline(config, len(vocab), np.random.default_rng(0))
    apply_checkpoint(store, entries)
    return config, vocab, state, store
