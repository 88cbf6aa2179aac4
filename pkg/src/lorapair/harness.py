"""Experiment pipeline: pre-train and freeze, fine-tune, evaluate, ablate.

All randomness comes from ``cfg.seed`` through named streams (``init``,
``data``, ``shuffle``, ...), so each stage is reproducible on its own. CSV
numbers use 6 significant digits.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, backward, cross_entropy_loss
from .checkpoint import file_digest, load_adapters, load_encoder, save_adapters, save_encoder
from .config import RunConfig
from .data import generate_synthetic, load_tsv, split_dataset, tokenize
from .encoder import build_encoder, classification_score, forward_batch
from .errors import SuiteError, TrainingDivergence, ValidationError
from .lora import trainable_param_report
from .metrics import MetricsReport, confusion, metrics
from .optim import AblationConfig, apply_ablation, step_lora
from .scoring import calibrate_threshold, decide, density_features, fuse_match_score

log = logging.getLogger(__name__)

EVAL_BATCH = 64
BASE_CKPT = "base.ckpt"
ADAPTER_CKPT = "adapters.ckpt"
ABLATION_HEADER = ("configuration", "acc", "f1", "mcc")
PER_EXAMPLE_HEADER = ("id", "S_cls", "d_j", "w_s", "S_loc", "S_match", "pred", "label")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".6g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def rng_stream(seed: int, name: str):
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# --- data --------------------------------------------------------------------


def load_examples(cfg: RunConfig):
    if cfg.data_source == "tsv":
        return load_tsv(cfg.data_path)
    return generate_synthetic(cfg.seed, cfg.data_n)


def make_splits(cfg: RunConfig, examples=None) -> dict:
    examples = load_examples(cfg) if examples is None else examples
    return split_dataset(examples, rng_stream(cfg.seed, "data"), cfg.pretrain_frac, cfg.val_frac, cfg.test_frac)


def pretrain_examples(cfg: RunConfig, splits) -> list:
    """The pretrain slice plus ``pretrain_n`` fresh synthetic pairs absent from every split."""
    examples = list(splits["pretrain"])
    if cfg.pretrain_n:
        seen = {(ex.text_a, ex.text_b) for part in splits.values() for ex in part}
        seed = int(rng_stream(cfg.seed, "pretrain-data").integers(2**31))
        extra = [ex for ex in generate_synthetic(seed, cfg.pretrain_n) if (ex.text_a, ex.text_b) not in seen]
        examples += extra
    return examples


@dataclass
class Encoded:
    ids: list
    pairs: list
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)


def encode(cfg: RunConfig, examples) -> Encoded:
    tok = lambda t: tokenize(t, cfg.vocab_size, cfg.max_seq_len)
    return Encoded(
        ids=[ex.id for ex in examples],
        pairs=[(tok(ex.text_a), tok(ex.text_b)) for ex in examples],
        labels=np.array([ex.label for ex in examples], dtype=np.int64),
    )


def _batches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _checked_loss(loss, where):
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDivergence(f"non-finite loss {value} during {where}")
    return value


# --- scoring -----------------------------------------------------------------


@dataclass
class ScoredSplit:
    ids: list
    labels: np.ndarray
    s_cls: np.ndarray
    d_j: np.ndarray
    w_s: np.ndarray
    s_loc: np.ndarray
    s_match: np.ndarray


def score_split(cfg: RunConfig, model, data: Encoded) -> ScoredSplit:
    """Forward every pair and compute S_cls, the density features and S_match."""
    if len(data) == 0:
        raise ValidationError("cannot score an empty split")
    weights = cfg.fusion_weights()
    cols = {k: [] for k in ("s_cls", "d_j", "w_s", "s_loc", "s_match")}
    for idx in _batches(len(data), EVAL_BATCH):
        out = forward_batch(model, [data.pairs[i] for i in idx])
        for row in range(len(idx)):
            s_cls = classification_score(out.logits.data[row])
            feats = density_features(out.sim_matrix(row), cfg.align_threshold)
            s = fuse_match_score(s_cls, feats, weights) if cfg.density_scoring else s_cls
            for k, v in zip(cols, (s_cls, feats.d_j, feats.w_s, feats.s_loc, s)):
                cols[k].append(v)
    return ScoredSplit(data.ids, data.labels, **{k: np.array(v) for k, v in cols.items()})


def predictions(scored: ScoredSplit, threshold: float):
    return [decide(s, threshold) for s in scored.s_match]


def report_for(scored: ScoredSplit, threshold: float) -> MetricsReport:
    return metrics(confusion(predictions(scored, threshold), scored.labels))


# --- training ----------------------------------------------------------------


def _sgd_epoch(model, data: Encoded, batch_size, rng, update, where):
    losses = []
    for idx in _batches(len(data), batch_size, rng):
        with Tape() as tape:
            out = forward_batch(model, [data.pairs[i] for i in idx], with_sims=False)
            loss = cross_entropy_loss(out.logits, data.labels[idx])
        losses.append(_checked_loss(loss, where))
        backward(loss, tape, wrt=model.trainable())
        update()
    return float(np.mean(losses))


class Adam:
    """Adam for pre-training the base only; fine-tuning uses plain per-factor descent."""

    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        c1, c2 = 1 - self.b1**self.t, 1 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad**2
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class PretrainResult:
    model: object
    checkpoint: Path | None
    history: list
    pretrain_acc: float


def pretrain_and_freeze(cfg: RunConfig, out_dir=None, splits=None) -> PretrainResult:
    """Train the whole encoder on the pretrain slice, freeze it, write ``base.ckpt``."""
    splits = make_splits(cfg) if splits is None else splits
    data = encode(cfg, pretrain_examples(cfg, splits))
    model = build_encoder(cfg.encoder_config(), rng_stream(cfg.seed, "init")).unfreeze()
    shuffle = rng_stream(cfg.seed, "pretrain-shuffle")
    adam = Adam(list(model.params.values()), cfg.pretrain_lr)

    history = []
    for epoch in range(cfg.pretrain_epochs):
        loss = _sgd_epoch(model, data, cfg.batch_size, shuffle, adam.step, "pre-training")
        history.append((epoch, loss))
        log.info("pretrain epoch %d loss %.4f", epoch, loss)
    model.freeze()

    scored = score_split(cfg.replace(density_scoring=False), model, encode(cfg, splits["pretrain"]))
    acc = report_for(scored, 0.5).acc
    path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / BASE_CKPT
        save_encoder(model, path, {"seed": cfg.seed, "pretrain_acc": acc})
        write_csv(out / "pretrain_history.csv", ("epoch", "train_loss"), history)
    return PretrainResult(model, path, history, acc)


@dataclass
class FinetuneResult:
    model: object
    mode: object
    history: list
    threshold: float
    validation: MetricsReport
    param_report: dict
    adapter_checkpoint: Path | None = None
    initial_logits: np.ndarray | None = field(default=None, repr=False)


HISTORY_HEADER = ("epoch", "train_loss", "val_acc", "val_f1", "val_mcc", "alpha", "beta")


def _snapshot(model, mode):
    state = {n: (a.A.data, a.B.data) for n, a in model.adapters.items()}
    dense = {n: model.params[n].data for n in mode.dense_names}
    return state, dense


def _restore(model, snap):
    state, dense = snap
    for n, (A, B) in state.items():
        model.adapters[n].A.data, model.adapters[n].B.data = A, B
    for n, W in dense.items():
        model.params[n].data = W


def finetune(cfg: RunConfig, checkpoint, out_dir=None, splits=None) -> FinetuneResult:
    """Fine-tune a frozen base per ``cfg``'s ablation flags and policy.

    Writes ``adapters.ckpt`` and ``history.csv`` (one row per epoch) when
    ``out_dir`` is given.
    """
    splits = make_splits(cfg) if splits is None else splits
    train, val = encode(cfg, splits["train"]), encode(cfg, splits["validation"])
    model = load_encoder(checkpoint) if isinstance(checkpoint, (str, Path)) else copy.deepcopy(checkpoint)
    mode = apply_ablation(
        cfg.ablation(), model, cfg.base_lr, policy=cfg.adaptation_policy(),
        targets=cfg.target_list(), rank=cfg.rank, scale=cfg.lora_scale,
        rng=rng_stream(cfg.seed, "adapter-init"),
    )
    params = trainable_param_report(model)
    initial_logits = forward_batch(model, val.pairs[:EVAL_BATCH], with_sims=False).logits.data.copy()
    shuffle = rng_stream(cfg.seed, "shuffle")
    last = {"alpha": cfg.base_lr, "beta": cfg.base_lr}

    def probe(rates):
        # one epoch with fixed candidate rates, then validation accuracy
        snap = _snapshot(model, mode)
        probe_rng = rng_stream(cfg.seed, "grid-probe")

        def fixed_update():
            for a in model.adapters.values():
                step_lora(a, a.A.grad, a.B.grad, rates)
            for n in mode.dense_names:
                W = model.params[n]
                W.data = W.data - rates.alpha * W.grad

        _sgd_epoch(model, train, cfg.batch_size, probe_rng, fixed_update, "grid probe")
        scored = score_split(cfg, model, val)
        acc = report_for(scored, calibrate_threshold(scored.s_match, scored.labels)).acc
        _restore(model, snap)
        return acc

    def update():
        for a in model.adapters.values():
            rates = mode.rates(a.A.grad, a.B.grad, probe)
            step_lora(a, a.A.grad, a.B.grad, rates)
            last["alpha"], last["beta"] = rates.alpha, rates.beta
        for n in mode.dense_names:
            W = model.params[n]
            rate = mode.dense_rate(W.grad, probe)
            W.data = W.data - rate * W.grad
            last["alpha"] = last["beta"] = rate

    if mode.adaptive and mode.policy.kind.value == "grid":
        # resolve the grid once up front; probing mid-batch would clobber gradients
        mode.rates(None, None, probe)

    history = []
    threshold, val_report = 0.5, None
    for epoch in range(cfg.epochs):
        loss = _sgd_epoch(model, train, cfg.batch_size, shuffle, update, "fine-tuning")
        scored = score_split(cfg, model, val)
        threshold = calibrate_threshold(scored.s_match, scored.labels)
        val_report = report_for(scored, threshold)
        history.append((epoch, loss, val_report.acc, val_report.f1, val_report.mcc, last["alpha"], last["beta"]))
        log.info("epoch %d loss %.4f val acc %.4f", epoch, loss, val_report.acc)

    result = FinetuneResult(model, mode, history, threshold, val_report, params, initial_logits=initial_logits)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.adapter_checkpoint = out / ADAPTER_CKPT
        save_adapters(model, result.adapter_checkpoint, mode.dense_names, {
            "ablation": mode.ablation.row_name,
            "policy": mode.policy.kind.value,
            "threshold": threshold,
        })
        write_csv(out / "history.csv", HISTORY_HEADER, history)
        write_csv(out / "params.csv", ("total_params", "trainable_params", "ratio"),
                  [(params["total_params"], params["trainable_params"], params["ratio"])])
    return result


# --- evaluation ----------------------------------------------------------------


@dataclass
class EvalResult:
    report: MetricsReport
    threshold: float
    scored: ScoredSplit
    preds: list


def load_finetuned(base_checkpoint, adapter_checkpoint):
    model = load_encoder(base_checkpoint)
    if adapter_checkpoint is not None:
        load_adapters(model, adapter_checkpoint)
    return model


def evaluate(cfg: RunConfig, model, split="validation", out_dir=None, splits=None) -> EvalResult:
    """Score ``split`` with a decision threshold calibrated on the validation split.

    Writes ``report.csv`` and ``per_example.csv`` when ``out_dir`` is given.
    """
    splits = make_splits(cfg) if splits is None else splits
    if split not in splits:
        raise ValidationError(f"unknown split {split!r}; choose from {sorted(splits)}")
    if not splits[split]:
        raise ValidationError(f"split {split!r} is empty")
    val = score_split(cfg, model, encode(cfg, splits["validation"]))
    threshold = calibrate_threshold(val.s_match, val.labels)
    scored = val if split == "validation" else score_split(cfg, model, encode(cfg, splits[split]))
    preds = predictions(scored, threshold)
    report = metrics(confusion(preds, scored.labels))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "report.csv", ("split", "acc", "f1", "mcc", "threshold", "n"),
                  [(split, report.acc, report.f1, report.mcc, threshold, len(preds))])
        rows = zip(scored.ids, scored.s_cls, scored.d_j, scored.w_s, scored.s_loc, scored.s_match, preds, scored.labels)
        write_csv(out / "per_example.csv", PER_EXAMPLE_HEADER, rows)
    return EvalResult(report, threshold, scored, preds)


# --- ablation ------------------------------------------------------------------

SUITE = (
    AblationConfig(True, True),
    AblationConfig(False, True),
    AblationConfig(True, False),
    AblationConfig(False, False),
)


@dataclass
class AblationRow:
    config_name: str
    acc: float
    f1: float
    mcc: float


def row_config(cfg: RunConfig, ab: AblationConfig) -> RunConfig:
    """The run configuration of one suite row; plain LoRA also drops density scoring."""
    return cfg.replace(
        use_adaptive_rates=ab.use_adaptive_rates,
        use_lowrank=ab.use_lowrank,
        density_scoring=cfg.density_scoring and (ab.use_adaptive_rates or ab.use_lowrank),
    )


def run_ablation_suite(cfg: RunConfig, out_dir, split="test"):
    """Four fine-tuning runs from one shared base checkpoint; writes ``ablation.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cfg)
    base = pretrain_and_freeze(cfg, out, splits)
    digest = file_digest(base.checkpoint)
    rows, meta = [], []
    for ab in SUITE:
        name = ab.row_name
        sub = out / name.lower().replace(" ", "_")
        run_cfg = row_config(cfg, ab)
        try:
            ft = finetune(run_cfg, base.checkpoint, sub, splits)
            model = load_finetuned(base.checkpoint, ft.adapter_checkpoint)
            ev = evaluate(run_cfg, model, split, sub, splits)
        except Exception as exc:
            raise SuiteError(name, exc) from exc
        rows.append(AblationRow(name, ev.report.acc, ev.report.f1, ev.report.mcc))
        meta.append((name, ab.use_adaptive_rates, ab.use_lowrank, run_cfg.density_scoring,
                     run_cfg.policy, run_cfg.seed, split, ft.param_report["trainable_params"], digest))
        log.info("%s: acc %.4f f1 %.4f mcc %.4f", name, ev.report.acc, ev.report.f1, ev.report.mcc)
    write_csv(out / "ablation.csv", ABLATION_HEADER, [(r.config_name, r.acc, r.f1, r.mcc) for r in rows])
    write_csv(out / "ablation_meta.csv",
              ("configuration", "use_adaptive_rates", "use_lowrank", "density_scoring", "policy",
               "seed", "split", "trainable_params", "base_checkpoint_sha256"), meta)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return rows
