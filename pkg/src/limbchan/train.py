"""Adam, seeding, mini-batch loops for both stages, and checkpoint files."""
import configparser
import dataclasses
import io
import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import EmptyDataset, ShapeMismatch, SingleClassDataset
from .models import (
    ClassifierConfig,
    ClassifierModel,
    ImputerConfig,
    ImputerModel,
    ResNetPlusPlus,
)
from .preprocess import ChannelConfig, select_channels

log = logging.getLogger(__name__)


def seeded_rng(seed, stream=None):
    """PCG64 generator seeded from ``seed``; ``stream`` names an independent
    substream so one user seed can feed several consumers."""
    key = () if stream is None else (zlib.crc32(stream.encode("utf-8")),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True
    validation_fraction: float = 0.1
    patience: int | None = 10
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and moments must align")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    lr = cfg.learning_rate
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.value.shape or m.shape != p.value.shape:
            raise ShapeMismatch(f"gradient {g.shape} for parameter {p.value.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr != 0.0:
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


def clip_global_norm(grads, max_norm):
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads if g is not None)))
    if max_norm is not None and total > max_norm:
        f = max_norm / (total + 1e-12)
        grads = [None if g is None else g * f for g in grads]
    return grads, total


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)

    def __iter__(self):
        yield self.model
        yield self.history


def _split_validation(n, cfg, rng):
    n_val = int(round(n * cfg.validation_fraction)) if cfg.validation_fraction > 0 else 0
    if n_val == 0 or n - n_val < 1:
        return np.arange(n), np.arange(0)
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _batches(idx, cfg, rng):
    order = rng.permutation(idx) if cfg.shuffle else np.asarray(idx)
    for i in range(0, len(order), cfg.batch_size):
        yield order[i : i + cfg.batch_size]


class _Logger:
    """Line-oriented training log: ``epoch=<n> split=<s> loss=<x> elapsed=<s>``."""

    def __init__(self, sink):
        self.sink = sink
        self.t0 = time.perf_counter()

    def __call__(self, epoch, split, loss):
        line = f"epoch={epoch} split={split} loss={loss:.8g} elapsed={time.perf_counter() - self.t0:.2f}"
        log.info(line)
        if self.sink is not None:
            self.sink.write(line + "\n")
            self.sink.flush()


def _fit(model, params, loss_fn, n, cfg, rng, logger, checkpoint=None):
    """Generic loop; ``loss_fn(batch_idx, training)`` returns a scalar Tensor."""
    state = AdamState.zeros_like(params)
    train_idx, val_idx = _split_validation(n, cfg, rng)
    history, val_history = [], []
    best, best_state, bad = np.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total = 0.0
        for batch in _batches(train_idx, cfg, rng):
            for p in params:
                p.grad = None
            loss = loss_fn(batch, True)
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
            grads, _ = clip_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, state, cfg)
            total += float(loss.value) * len(batch)
        epoch_loss = total / len(train_idx)
        history.append(epoch_loss)
        logger(epoch, "train", epoch_loss)
        if len(val_idx):
            model.eval()
            with ad.no_grad():
                vl = sum(float(loss_fn(b, False).value) * len(b)
                         for b in np.array_split(val_idx, max(1, -(-len(val_idx) // cfg.batch_size))))
            vl /= len(val_idx)
            val_history.append(vl)
            logger(epoch, "val", vl)
            if vl < best:
                best, bad = vl, 0
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
            else:
                bad += 1
        if checkpoint is not None:
            checkpoint(epoch)
        if cfg.patience is not None and len(val_idx) and bad >= cfg.patience:
            log.info("early stop at epoch %d", epoch)
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return history, val_history


def train_imputer(dataset, channel_config=None, model_config=None, cfg=None, log_sink=None,
                  checkpoint=None):
    """Fit the seq2seq imputer with an l2 loss on all 12 output channels.

    Labels are ignored, so unlabeled frames may be included.
    """
    cfg = cfg or TrainConfig()
    model_config = model_config or ImputerConfig()
    if channel_config is not None:
        leads = channel_config.leads if isinstance(channel_config, ChannelConfig) else tuple(channel_config)
        model_config = dataclasses.replace(model_config, leads=leads)
    if len(dataset) == 0:
        raise EmptyDataset("no frames to train on")
    if dataset.data.shape[2] != model_config.n_out:
        raise ShapeMismatch(f"targets need {model_config.n_out} channels, dataset has {dataset.data.shape[2]}")
    model = ImputerModel(model_config, seeded_rng(cfg.seed, "imputer-init"))
    x_hat = select_channels(dataset, model.channel_config).data
    target = dataset.data
    params = model.parameters()

    def loss_fn(b, training):
        return ad.mse_loss(model.impute(x_hat[b]), target[b])

    hook = None if checkpoint is None else (lambda e: checkpoint(model, e))
    history, val = _fit(model, params, loss_fn, len(dataset), cfg, seeded_rng(cfg.seed, "imputer-loop"),
                        _Logger(log_sink), hook)
    return TrainResult(model, history, val)


def stage2_inputs(imputer, x_hat, input_mode="imputed_signal", batch_size=64):
    """Frozen stage 1 features for every frame, computed in eval mode."""
    imputer.eval()
    out = []
    with ad.no_grad():
        for i in range(0, len(x_hat), batch_size):
            xb = x_hat[i : i + batch_size]
            if input_mode == "imputed_signal":
                out.append(imputer.impute(xb).value)
            else:
                out.append(imputer.encode(xb).sequence.value)
    return np.concatenate(out, axis=0)


def train_classifier(dataset, imputer=None, model_config=None, cfg=None, leads=None,
                     input_mode="imputed_signal", finetune=False, log_sink=None, checkpoint=None):
    """Fit a 1-D ResNet with cross entropy on healthy (0) vs abnormal (1).

    With an ``imputer`` the classifier sees stage 1 features and the imputer
    stays untouched unless ``finetune``; without one it sees the raw
    limited-lead view selected by ``leads`` (the baseline).
    """
    cfg = cfg or TrainConfig(epochs=50, clip_norm=None)
    if len(dataset) == 0:
        raise EmptyDataset("no frames to train on")
    y = dataset.binary_targets
    if len(np.unique(y)) < 2:
        raise SingleClassDataset("training data must contain healthy and abnormal frames")
    if imputer is not None:
        leads = imputer.channel_config.leads
    elif leads is None:
        raise ValueError("baseline training needs the lead set")
    x_hat = select_channels(dataset, ChannelConfig.resolve(leads, dataset.channel_names)).data
    if imputer is None:
        feats = x_hat
        in_ch = x_hat.shape[2]
    elif finetune:
        feats = None
        in_ch = imputer.config.n_out if input_mode == "imputed_signal" else imputer.config.hidden
    else:
        feats = stage2_inputs(imputer, x_hat, input_mode)
        in_ch = feats.shape[2]
    model_config = dataclasses.replace(model_config or ClassifierConfig(), in_channels=in_ch)
    init_rng = seeded_rng(cfg.seed, "classifier-init")
    model = ClassifierModel(model_config, init_rng)
    dropout_rng = seeded_rng(cfg.seed, "dropout")
    for block in model.blocks:
        block.rng = dropout_rng
    params = model.parameters()
    pp = None
    if imputer is not None and finetune:
        pp = ResNetPlusPlus(imputer, model, input_mode, frozen=False)
        params = params + imputer.parameters()

    def loss_fn(b, training):
        if pp is not None:
            imputer.train(training)
            inp = pp.features(x_hat[b])
        else:
            inp = feats[b]
        return ad.softmax_cross_entropy(model.logits(inp), y[b])

    hook = None if checkpoint is None else (lambda e: checkpoint(model, e))
    history, val = _fit(model, params, loss_fn, len(dataset), cfg, seeded_rng(cfg.seed, "classifier-loop"),
                        _Logger(log_sink), hook)
    if imputer is not None:
        imputer.eval()
    return TrainResult(model, history, val)


# ---------------------------------------------------------------- checkpoints


def _config_section(cfg):
    out = {}
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            if val and isinstance(val[0], tuple):
                val = ";".join(",".join(str(x) for x in item) for item in val)
            else:
                val = ",".join(str(x) for x in val)
        out[f.name] = str(val)
    return out


def _parse_value(text, default):
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        if default and isinstance(default[0], tuple):
            return tuple(tuple(int(x) for x in item.split(",")) for item in text.split(";") if item)
        return tuple(t for t in text.split(",") if t)
    return text


def config_from_section(cls, section):
    base = cls()
    kw = {}
    for f in dataclasses.fields(cls):
        if f.name in section:
            kw[f.name] = _parse_value(section[f.name], getattr(base, f.name))
    return cls(**kw)


def save_checkpoint(stem, model, kind, extra=None):
    """Write ``<stem>.lcw`` (weights) and ``<stem>.ini`` (structure sidecar)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    ad.save_params(buf, model.state_dict())
    stem.with_suffix(".lcw").write_bytes(buf.getvalue())
    cp = configparser.ConfigParser()
    cp["model"] = {"kind": kind}
    cp["config"] = _config_section(model.config)
    for name, values in (extra or {}).items():
        cp[name] = {k: str(v) for k, v in values.items()}
    with open(stem.with_suffix(".ini"), "w", encoding="utf-8") as fh:
        cp.write(fh)
    return stem.with_suffix(".lcw")


def load_checkpoint(stem):
    """Rebuild the model saved under ``stem``; returns ``(model, sidecar)``."""
    stem = Path(stem)
    if stem.suffix in (".lcw", ".ini"):
        stem = stem.with_suffix("")
    cp = configparser.ConfigParser()
    if not cp.read(stem.with_suffix(".ini"), encoding="utf-8"):
        raise FileNotFoundError(stem.with_suffix(".ini"))
    kind = cp["model"]["kind"]
    if kind == "imputer":
        model = ImputerModel(config_from_section(ImputerConfig, cp["config"]))
    else:
        model = ClassifierModel(config_from_section(ClassifierConfig, cp["config"]))
    with open(stem.with_suffix(".lcw"), "rb") as fh:
        model.load_state_dict(ad.load_params(fh))
    model.eval()
    return model, cp
