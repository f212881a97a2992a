"""Alternating teacher/student optimization, early stopping and checkpoints.

Within every batch the teacher first samples molecules, scores them with
the frozen student, and takes its policy-gradient step; then one molecule
per pair is drawn (by its teacher probability) to supervise the student's
step with the teacher frozen. One driver thread owns the parameter store;
batch order and all sampling derive from the configured seed, so a run is
fully reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .composer import AtomSet, ComposerParams, compose_molecule
from .errors import ContractError, UsageError
from .params import ParameterStore
from .seqmodel import DecoderParams, EncoderParams, GRUCellParams, encode, response_log_likelihood
from .student import StudentExample, StudentState, response_likelihood, student_update
from .teacher import (
    SampledBatchItem,
    TeacherState,
    compute_rewards,
    encode_pair,
    reinforce_update,
    sample_unique_molecules,
)
from .vocab import Vocab


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 30
    k_t: int = 4
    k_max: int = 6
    l: int = 4
    beam_molecules: int = 8
    beam_tokens: int = 8
    embed_dim: int = 32
    hidden_dim: int = 64
    atom_count: int = 8
    sample_attempts: int = 40
    rho: float = 0.95
    eps: float = 1e-6
    patience: int = 7
    seed: int = 0
    init_range: float = 0.01
    max_response_len: int = 20
    vocab_size: int = 200
    corpus_dir: str = "corpus"
    vocab_path: str = "vocab.txt"
    checkpoint_dir: str = "checkpoints"

    def __post_init__(self):
        for name in (
            "batch_size",
            "k_t",
            "k_max",
            "l",
            "beam_molecules",
            "beam_tokens",
            "embed_dim",
            "hidden_dim",
            "atom_count",
            "sample_attempts",
            "max_response_len",
            "vocab_size",
        ):
            if getattr(self, name) < 1:
                raise ContractError(f"config {name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ContractError(f"config epochs must be >= 0, got {self.epochs}")
        if self.patience < 1:
            raise ContractError(f"config patience must be >= 1, got {self.patience}")
        if self.init_range <= 0:
            raise ContractError(f"config init_range must be positive, got {self.init_range}")
        if not 0.0 < self.rho < 1.0:
            raise ContractError(f"config rho must lie in (0,1), got {self.rho}")
        if self.eps <= 0:
            raise ContractError(f"config eps must be positive, got {self.eps}")

    def to_dict(self):
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def make_config(overrides):
    """Build a TrainConfig from string key/value overrides; unknown keys are errors."""
    kwargs = {}
    for key, raw in overrides.items():
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config key '{key}'")
        kind = _FIELD_TYPES[key]
        try:
            if kind == "int":
                kwargs[key] = int(raw)
            elif kind == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        except ValueError as e:
            raise UsageError(f"bad value for config key '{key}': {raw!r}") from e
    return TrainConfig(**kwargs)


def parse_config(text):
    """Parse flat key=value lines; blank lines and # comments are ignored."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        overrides[key.strip()] = value.strip()
    return make_config(overrides)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


# --------------------------------------------------------------------------
# Initialization


def _uniform(store, path, shape, rng, init_range):
    return store.add(path, rng.uniform(-init_range, init_range, size=shape))


def _zeros(store, path, shape):
    return store.add(path, np.zeros(shape))


def _init_gru(store, prefix, input_dim, hidden_dim, rng, init_range):
    cols = input_dim + hidden_dim
    return GRUCellParams(
        w_z=_uniform(store, f"{prefix}.w_z", (hidden_dim, cols), rng, init_range),
        w_r=_uniform(store, f"{prefix}.w_r", (hidden_dim, cols), rng, init_range),
        w_h=_uniform(store, f"{prefix}.w_h", (hidden_dim, cols), rng, init_range),
        b_z=_zeros(store, f"{prefix}.b_z", (hidden_dim,)),
        b_r=_zeros(store, f"{prefix}.b_r", (hidden_dim,)),
        b_h=_zeros(store, f"{prefix}.b_h", (hidden_dim,)),
    )


def _init_encoder(store, prefix, vocab_size, embed_dim, hidden_dim, rng, init_range):
    return EncoderParams(
        embed=_uniform(store, f"{prefix}.embed", (vocab_size, embed_dim), rng, init_range),
        gru=_init_gru(store, f"{prefix}.gru", embed_dim, hidden_dim, rng, init_range),
    )


def _init_decoder(store, prefix, vocab_size, embed_dim, hidden_dim, ctx_dim, rng, init_range):
    return DecoderParams(
        embed=_uniform(store, f"{prefix}.embed", (vocab_size, embed_dim), rng, init_range),
        gru=_init_gru(store, f"{prefix}.gru", embed_dim + ctx_dim, hidden_dim, rng, init_range),
        w_out=_uniform(store, f"{prefix}.w_out", (vocab_size, hidden_dim), rng, init_range),
        b_out=_zeros(store, f"{prefix}.b_out", (vocab_size,)),
    )


def _init_composer(store, prefix, ctx_dim, hidden_dim, atom_count, rng, init_range):
    return ComposerParams(
        gru=_init_gru(store, f"{prefix}.gru", hidden_dim + ctx_dim, hidden_dim, rng, init_range),
        w_policy=_uniform(store, f"{prefix}.w_policy", (atom_count + 1, hidden_dim), rng, init_range),
    )


def init_params(config, vocab_size, rng):
    """Fresh teacher and student states in one store.

    Weights and embeddings are i.i.d. uniform on [-init_range, init_range],
    biases zero; identical seeds give bit-identical states.
    """
    store = ParameterStore()
    e, h, n, r = config.embed_dim, config.hidden_dim, config.atom_count, config.init_range
    teacher = TeacherState(
        post_encoder=_init_encoder(store, "teacher.post_enc", vocab_size, e, h, rng, r),
        response_encoder=_init_encoder(store, "teacher.resp_enc", vocab_size, e, h, rng, r),
        composer=_init_composer(store, "teacher.composer", 2 * h, h, n, rng, r),
        atoms=AtomSet(embed=_uniform(store, "teacher.atoms.embed", (n + 1, h), rng, r)),
    )
    student = StudentState(
        encoder=_init_encoder(store, "student.enc", vocab_size, e, h, rng, r),
        composer=_init_composer(store, "student.composer", h, h, n, rng, r),
        atoms=AtomSet(embed=_uniform(store, "student.atoms.embed", (n + 1, h), rng, r)),
        decoder=_init_decoder(store, "student.dec", vocab_size, e, h, h, rng, r),
    )
    return teacher, student, store


# --------------------------------------------------------------------------
# Epoch loop


@dataclass
class EpochRecord:
    epoch: int
    teacher_mean_reward: float
    student_loss: float
    val_nll: float
    mean_molecule_prob: float
    wall_time_s: float

    def log_fields(self):
        # wall time stays out of the persisted log so reruns are byte-identical
        return {
            "epoch": self.epoch,
            "teacher_mean_reward": self.teacher_mean_reward,
            "student_loss": self.student_loss,
            "val_nll": self.val_nll,
            "mean_molecule_prob": self.mean_molecule_prob,
        }


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ContractError("epoch records must be strictly increasing")
        self.records.append(record)

    def lines(self, events=()):
        out = [json.dumps(r.log_fields(), sort_keys=True) for r in self.records]
        out.extend(json.dumps(e, sort_keys=True) for e in events)
        return out


def select_molecule_for_student(item, rng):
    """Draw one sampled molecule, weighted by its teacher composer probability."""
    if not item.molecules:
        raise ContractError("select_molecule_for_student: no molecules sampled")
    logps = np.asarray(item.molecule_logps, dtype=np.float64)
    w = np.exp(logps - logps.max())
    idx = int(rng.choice(len(w), p=w / w.sum()))
    return item.molecules[idx]


def _pair_rng(config, pair_index, stream):
    """Per-pair random stream, stable across epochs (common random numbers).

    Freezing the draws per pair keeps the teacher's sampled molecules and
    the student's supervision consistent between epochs, so changes come
    from policy movement rather than resampling noise. It also lets batch
    items run concurrently with reproducible results.
    """
    return np.random.default_rng(np.random.SeedSequence([config.seed, pair_index, stream]))


def _sample_batch_item(teacher, student, x, y, n_responses, config, rng):
    with ad.no_grad():
        c_pair = encode_pair(teacher, x, y)
        molecules, logps = sample_unique_molecules(
            teacher, c_pair, config.k_t, config.k_max, config.sample_attempts, rng, return_logps=True
        )
        c_post = encode(student.encoder, x)
        loglikes = [
            response_log_likelihood(
                student.decoder, compose_molecule(student.atoms, m, c_post), y
            ).item()
            for m in molecules
        ]
    return SampledBatchItem(
        x=x,
        y=y,
        n_responses=n_responses,
        molecules=molecules,
        molecule_logps=logps,
        student_loglikes=loglikes,
        rewards=compute_rewards(loglikes, len(y)),
    )


def train_epoch(teacher, student, store, train_instances, val_instances, config, epoch):
    """One pass over the corpus: per batch, a teacher step then a student step."""
    if not train_instances:
        raise ContractError("train_epoch: empty corpus")
    started = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch, 0]))
    order = rng.permutation(len(train_instances))
    reward_sum, reward_count = 0.0, 0
    loss_sum, prob_sum, n_batches = 0.0, 0.0, 0
    for start in range(0, len(order), config.batch_size):
        indices = order[start : start + config.batch_size]
        items = []
        for i in indices:
            x, y, n = train_instances[i]
            items.append(
                _sample_batch_item(teacher, student, x, y, n, config, _pair_rng(config, int(i), 0))
            )
        reinforce_update(teacher, items, store, config.rho, config.eps, config.k_max)
        for item in items:
            reward_sum += sum(item.rewards)
            reward_count += len(item.rewards)
        examples = [
            StudentExample(
                x=item.x,
                y=item.y,
                molecule=select_molecule_for_student(item, _pair_rng(config, int(i), 1)),
                n_responses=item.n_responses,
            )
            for i, item in zip(indices, items)
        ]
        loss, mean_prob = student_update(student, examples, store, config.rho, config.eps, config.k_max)
        loss_sum += loss / len(examples)
        prob_sum += mean_prob
        n_batches += 1
    val_rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch, 1]))
    val_nll = validation_nll(teacher, student, val_instances, config, val_rng)
    return EpochRecord(
        epoch=epoch,
        teacher_mean_reward=reward_sum / max(reward_count, 1),
        student_loss=loss_sum / n_batches,
        val_nll=val_nll,
        mean_molecule_prob=prob_sum / n_batches,
        wall_time_s=time.perf_counter() - started,
    )


def validation_nll(teacher, student, instances, config, rng):
    """Mean per-token negative log-likelihood under the teacher's best sampled molecule."""
    if not instances:
        return float("nan")
    total = 0.0
    with ad.no_grad():
        for x, y, _ in instances:
            c_pair = encode_pair(teacher, x, y)
            molecules, logps = sample_unique_molecules(
                teacher, c_pair, config.k_t, config.k_max, config.sample_attempts, rng, return_logps=True
            )
            best = molecules[int(np.argmax(logps))]
            total += -response_likelihood(student, x, best, y).item() / len(y)
    return total / len(instances)


def early_stop(history, patience=7):
    """Early-stop decision over a validation-error history.

    Returns (stop, best_index). ``best_index`` is the earliest global
    minimum. The stop flag raises once the error has risen for ``patience``
    consecutive epochs, not counting the step off the running best: only
    strictly increasing deltas lying strictly after the best epoch count
    toward the streak. Plateaus reset it (equality is not an increase).
    """
    if not history:
        raise ContractError("early_stop: empty history")
    best = min(range(len(history)), key=lambda i: (history[i], i))
    run = 0
    j = len(history) - 1
    while j >= best + 2 and history[j] > history[j - 1]:
        run += 1
        j -= 1
    return run >= patience, best


# --------------------------------------------------------------------------
# Driver


@dataclass
class TrainResult:
    log: TrainLog
    best_epoch: int  # 1-based; 0 when no epoch ran
    stop_reason: str
    teacher: TeacherState
    student: StudentState
    store: ParameterStore


def checkpoint_meta(config, vocab, kind):
    return {"kind": kind, "config": config.to_dict(), "vocab": list(vocab.tokens)}


def run_training(
    config,
    train_instances,
    val_instances,
    vocab,
    checkpoint_path=None,
    log_path=None,
    validate_override=None,
    epoch_callback=None,
):
    """Train to the epoch cap or early stop; checkpoint the best-validation epoch.

    ``validate_override(epoch)``, when given, replaces the measured
    validation metric (used by tests to script the early-stop rule).
    ``epoch_callback(epoch, teacher, student, store)`` runs after each epoch.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    teacher, student, store = init_params(config, len(vocab), rng)
    if not val_instances:
        val_instances = train_instances
    meta = checkpoint_meta(config, vocab, "arm")
    log = TrainLog()
    stop_reason = "epoch-cap"
    best_epoch = 0
    if checkpoint_path is not None and config.epochs == 0:
        save_checkpoint(checkpoint_path, store, meta)
    for epoch in range(1, config.epochs + 1):
        record = train_epoch(teacher, student, store, train_instances, val_instances, config, epoch)
        if validate_override is not None:
            record.val_nll = float(validate_override(epoch))
        log.append(record)
        if epoch_callback is not None:
            epoch_callback(epoch, teacher, student, store)
        history = [r.val_nll for r in log.records]
        stop, best_index = early_stop(history, config.patience)
        if best_index == len(history) - 1:
            best_epoch = epoch
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, store, meta)
        if stop:
            stop_reason = "early-stop"
            break
    if log_path is not None:
        events = [{"event": "stop", "reason": stop_reason, "best_epoch": best_epoch}]
        with open(log_path, "w", encoding="utf-8") as f:
            for line in log.lines(events):
                f.write(line + "\n")
    return TrainResult(
        log=log,
        best_epoch=best_epoch,
        stop_reason=stop_reason,
        teacher=teacher,
        student=student,
        store=store,
    )


def load_arm_checkpoint(path):
    """Rebuild (config, vocab, teacher, student, store) from a checkpoint file."""
    meta, entries = load_checkpoint(path)
    if meta.get("kind") != "arm":
        raise ContractError(f"checkpoint kind {meta.get('kind')!r}, expected 'arm'")
    config = TrainConfig(**meta["config"])
    vocab = Vocab(meta["vocab"])
    teacher, student, store = init_params(config, len(vocab), np.random.default_rng(0))
    apply_checkpoint(store, entries)
    return config, vocab, teacher, student, store
