"""Three-stage training driver: score pretraining, instruction tuning, and
feedback fine-tuning of the regression heads.

Production-scale hyperparameters are the defaults (Adam, lr 1e-5, cosine decay,
batch 8); desk-scale runs usually override the learning rate, and the
override is recorded in the history so the defaults stay visible.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .dataset import Dataset, QaPair, generate_qa_pairs
from .metrics import srcc
from .model import MintModel
from .tensor import Tensor


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    mode: str = "joint"  # joint | single
    loss: str = "l1"     # l1 | pairwise
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.mode not in ("joint", "single"):
            raise TrainingError(f"unknown mode {self.mode!r}")
        if self.loss not in ("l1", "pairwise"):
            raise TrainingError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(step: int, total_steps: int, initial: float) -> float:
    """Cosine annealing from ``initial`` at step 0 to 0 at the final step."""
    if total_steps <= 1:
        return initial if step == 0 else 0.0
    x = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return 0.5 * initial * (1.0 + math.cos(math.pi * x))


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for n, p in self.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            mhat = self.m[n] / bc1
            vhat = self.v[n] / bc2
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def l1_loss(predicted: Tensor, labels) -> Tensor:
    """Mean absolute error over the regression heads (and batch)."""
    target = labels if isinstance(labels, Tensor) else Tensor(np.asarray(labels))
    return T.l1(predicted, target)


def pairwise_loss(score_better: Tensor, score_worse: Tensor) -> Tensor:
    """-log sigmoid(better - worse), computed stably; ln 2 at zero margin."""
    margin = T.sub(score_better, score_worse)
    return T.mean(T.softplus(T.scale(margin, -1.0)))


def ranking_expand(ranked: list) -> list[tuple]:
    """All ordered (better, worse) pairs from a strict best-to-worst ranking."""
    return [(ranked[i], ranked[j])
            for i in range(len(ranked)) for j in range(i + 1, len(ranked))]


# ---------------------------------------------------------------------------
# helpers shared by the stages
# ---------------------------------------------------------------------------

class _Cache:
    """Decoded pixels and prompt text per image, loaded once per run."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self.pixels: dict[str, np.ndarray] = {}

    def get(self, image_id: str) -> tuple[str, np.ndarray]:
        if image_id not in self.pixels:
            self.pixels[image_id] = self.ds.load_pixels(image_id)
        prompt = self.ds.prompts[self.ds.images[image_id].prompt_id].raw_text
        return prompt, self.pixels[image_id]


def _labels_for(ds: Dataset, model: MintModel, image_id: str) -> np.ndarray:
    scores = ds.mos[image_id]
    return np.array([scores[name] for name in
                     model.config.head_names[:model.config.n_regressors]])


def train_srcc_per_head(ds: Dataset, model: MintModel,
                        image_ids: list[str] | None = None) -> list[float]:
    image_ids = image_ids or sorted(set(ds.mos) & set(ds.images))
    cache = _Cache(ds)
    preds = []
    labels = []
    for iid in image_ids:
        prompt, pixels = cache.get(iid)
        preds.append(model.predict_scores(prompt, pixels).data)
        labels.append(_labels_for(ds, model, iid))
    preds = np.array(preds)
    labels = np.array(labels)
    return [srcc(preds[:, i], labels[:, i]) for i in range(model.config.n_regressors)]


def pairs_from_mos(ds: Dataset, dimension: str) -> list[tuple[str, str]]:
    """Per-prompt rankings by reference score, expanded into comparison pairs."""
    by_prompt: dict[str, list[str]] = {}
    for iid, img in ds.images.items():
        if iid in ds.mos and dimension in ds.mos[iid]:
            by_prompt.setdefault(img.prompt_id, []).append(iid)
    pairs: list[tuple[str, str]] = []
    for pid in sorted(by_prompt):
        ranked = sorted(by_prompt[pid], key=lambda i: -ds.mos[i][dimension])
        pairs.extend(ranking_expand(ranked))
    return pairs


# ---------------------------------------------------------------------------
# stage 1: score regression pretraining
# ---------------------------------------------------------------------------

def stage1_pretrain(ds: Dataset, model: MintModel, cfg: TrainConfig,
                    history_path=None) -> list[dict]:
    model.set_trainable(lambda n: not n.startswith(("iqf.", "zconv.", "adapter.",
                                                    "dec.")))
    image_ids = sorted(set(ds.images) & set(ds.mos))
    if cfg.loss == "l1" and not image_ids:
        raise TrainingError("l1 loss requires MOS labels in the dataset")
    cache = _Cache(ds)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2)
    rng = random.Random(cfg.seed)
    history: list[dict] = []

    if cfg.loss == "pairwise":
        dim = model.config.head_names[0]
        pairs = pairs_from_mos(ds, dim)
        if not pairs:
            raise TrainingError("pairwise loss requires rankable labels")
        total_steps = cfg.epochs * max(1, math.ceil(len(pairs) / cfg.batch_size))
        step = 0
        for epoch in range(cfg.epochs):
            rng.shuffle(pairs)
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, len(pairs), cfg.batch_size):
                batch = pairs[start:start + cfg.batch_size]
                lr = cosine_lr(step, total_steps, cfg.learning_rate)
                opt.zero_grad()
                with T.Tape() as tape:
                    losses = []
                    for better, worse in batch:
                        pb, xb = cache.get(better)
                        pw, xw = cache.get(worse)
                        sb = T.slice_(model.predict_scores(pb, xb), 0, 0, 1)
                        sw = T.slice_(model.predict_scores(pw, xw), 0, 0, 1)
                        losses.append(pairwise_loss(sb, sw))
                    loss = T.scale(_sum_scalars(losses), 1.0 / len(losses))
                tape.backward(loss)
                opt.step(lr)
                epoch_loss += loss.item()
                n_batches += 1
                step += 1
            history.append({"stage": 1, "epoch": epoch, "loss": epoch_loss / n_batches,
                            "lr": cosine_lr(step - 1, total_steps, cfg.learning_rate),
                            "train_srcc": train_srcc_per_head(ds, model)
                            if image_ids else None})
    else:
        total_steps = cfg.epochs * max(1, math.ceil(len(image_ids) / cfg.batch_size))
        step = 0
        order = list(image_ids)
        for epoch in range(cfg.epochs):
            rng.shuffle(order)
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                lr = cosine_lr(step, total_steps, cfg.learning_rate)
                if cfg.mode == "joint":
                    opt.zero_grad()
                    with T.Tape() as tape:
                        losses = []
                        for iid in batch:
                            prompt, pixels = cache.get(iid)
                            pred = model.predict_scores(prompt, pixels)
                            losses.append(l1_loss(pred, _labels_for(ds, model, iid)))
                        loss = T.scale(_sum_scalars(losses), 1.0 / len(losses))
                    tape.backward(loss)
                    opt.step(lr)
                    epoch_loss += loss.item()
                else:  # single: one backward pass and step per head
                    head_losses = []
                    for i in range(model.config.n_regressors):
                        opt.zero_grad()
                        with T.Tape() as tape:
                            losses = []
                            for iid in batch:
                                prompt, pixels = cache.get(iid)
                                pred = T.slice_(model.predict_scores(prompt, pixels),
                                                0, i, i + 1)
                                label = _labels_for(ds, model, iid)[i:i + 1]
                                losses.append(l1_loss(pred, label))
                            loss = T.scale(_sum_scalars(losses), 1.0 / len(losses))
                        tape.backward(loss)
                        opt.step(lr)
                        head_losses.append(loss.item())
                    epoch_loss += sum(head_losses) / len(head_losses)
                n_batches += 1
                step += 1
            history.append({"stage": 1, "epoch": epoch, "loss": epoch_loss / n_batches,
                            "lr": cosine_lr(step - 1, total_steps, cfg.learning_rate),
                            "train_srcc": train_srcc_per_head(ds, model, image_ids)})
    _write_history(history_path, history)
    return history


def _sum_scalars(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for extra in losses[1:]:
        total = T.add(total, extra)
    return total


# ---------------------------------------------------------------------------
# stage 2: instruction tuning
# ---------------------------------------------------------------------------

def qa_pairs_for_training(ds: Dataset) -> list[tuple[str, QaPair]]:
    """(prompt raw text, QaPair) tuples for every annotated image."""
    out = []
    for image_id in sorted(ds.annotations):
        prompt = ds.prompts[ds.images[image_id].prompt_id].raw_text
        for ann in ds.annotations[image_id]:
            for qa in generate_qa_pairs(ann, ds.vocabularies):
                out.append((prompt, qa))
    return out


def stage2_instruction_tune(ds: Dataset, model: MintModel, cfg: TrainConfig,
                            qa_pairs: list[tuple[str, QaPair]] | None = None,
                            history_path=None) -> list[dict]:
    qa_pairs = qa_pairs if qa_pairs is not None else qa_pairs_for_training(ds)
    if not qa_pairs:
        raise TrainingError("stage 2 requires question-answer pairs")
    model.set_trainable(lambda n: n.startswith(("iqf.", "zconv.", "adapter.",
                                                "dec.")))
    cache = _Cache(ds)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2)
    rng = random.Random(cfg.seed)
    order = list(qa_pairs)
    total_steps = cfg.epochs * max(1, math.ceil(len(order) / cfg.batch_size))
    step = 0
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            lr = cosine_lr(step, total_steps, cfg.learning_rate)
            opt.zero_grad()
            with T.Tape() as tape:
                losses = []
                for prompt, qa in batch:
                    _, pixels = cache.get(qa.image_id)
                    losses.append(model.answer_loss(prompt, pixels,
                                                    qa.question, qa.answer))
                loss = T.scale(_sum_scalars(losses), 1.0 / len(losses))
            tape.backward(loss)
            opt.step(lr)
            epoch_loss += loss.item()
            n_batches += 1
            step += 1
        history.append({"stage": 2, "epoch": epoch,
                        "loss": epoch_loss / n_batches,
                        "lr": cosine_lr(step - 1, total_steps, cfg.learning_rate)})
    _write_history(history_path, history)
    return history


def answer_exact_match(ds: Dataset, model: MintModel,
                       qa_pairs: list[tuple[str, QaPair]]) -> float:
    cache = _Cache(ds)
    hits = 0
    for prompt, qa in qa_pairs:
        _, pixels = cache.get(qa.image_id)
        generated = model.answer(prompt, pixels, qa.question)
        expected = " ".join(model.tokenizer.id_to_word[i]
                            for i in model.tokenizer.encode(qa.answer))
        hits += int(generated == expected)
    return hits / len(qa_pairs)


# ---------------------------------------------------------------------------
# stage 3: feedback fine-tuning of the heads
# ---------------------------------------------------------------------------

def stage3_feedback_finetune(ds: Dataset, model: MintModel, cfg: TrainConfig,
                             history_path=None) -> list[dict]:
    image_ids = sorted(set(ds.images) & set(ds.mos))
    if not image_ids:
        raise TrainingError("stage 3 requires MOS labels")
    model.set_trainable(lambda n: n.startswith("head"))
    cache = _Cache(ds)
    N = model.config.n_regressors
    d = model.config.d_model

    # Only the heads train, so the concatenated representations are constant:
    # precompute them once without a tape.
    features: dict[str, list[np.ndarray]] = {}
    labels: dict[str, np.ndarray] = {}
    for iid in image_ids:
        prompt, pixels = cache.get(iid)
        sample_cache: dict = {}
        per_head = []
        for i in range(N):
            reps = model.instruction_forward(prompt, pixels,
                                             model.config.head_instructions[i],
                                             _cache=sample_cache)
            per_head.append(reps.data.mean(axis=0))
        pooled = sample_cache["score_q"].data.mean(axis=0)
        features[iid] = [np.concatenate([pooled, ih]).reshape(1, 2 * d)
                         for ih in per_head]
        labels[iid] = _labels_for(ds, model, iid)

    def head_srcc() -> list[float]:
        preds = {i: [] for i in range(N)}
        for iid in image_ids:
            for i in range(N):
                preds[i].append(model._head(i, Tensor(features[iid][i])).item())
        return [srcc(preds[i], [labels[iid][i] for iid in image_ids])
                for i in range(N)]

    srcc_before = head_srcc()
    snapshots = [{n: p.data.copy() for n, p in model.params.items()
                  if n.startswith("head")}]
    epoch_srcc = [srcc_before]

    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2)
    rng = random.Random(cfg.seed)
    order = list(image_ids)
    total_steps = cfg.epochs * max(1, math.ceil(len(order) / cfg.batch_size))
    step = 0
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            lr = cosine_lr(step, total_steps, cfg.learning_rate)
            opt.zero_grad()
            with T.Tape() as tape:
                losses = []
                for iid in batch:
                    outs = [model._head(i, Tensor(features[iid][i])) for i in range(N)]
                    pred = T.reshape(T.concat(outs, axis=1), (N,))
                    losses.append(l1_loss(pred, labels[iid]))
                loss = T.scale(_sum_scalars(losses), 1.0 / len(losses))
            tape.backward(loss)
            opt.step(lr)
            epoch_loss += loss.item()
            n_batches += 1
            step += 1
        snapshots.append({n: p.data.copy() for n, p in model.params.items()
                          if n.startswith("head")})
        epoch_srcc.append(head_srcc())
        history.append({"stage": 3, "epoch": epoch, "loss": epoch_loss / n_batches,
                        "lr": cosine_lr(step - 1, total_steps, cfg.learning_rate),
                        "train_srcc": epoch_srcc[-1]})

    # keep, per head, the epoch with the best train correlation (epoch 0 is the
    # pre-finetune state, so feedback can only help, never hurt)
    for i in range(N):
        best = max(range(len(epoch_srcc)), key=lambda e: epoch_srcc[e][i])
        for suffix in ("w1", "b1", "w2", "b2"):
            name = f"head{i}.{suffix}"
            model.params[name].data = snapshots[best][name].copy()
    srcc_after = head_srcc()
    history.append({"stage": 3, "event": "final",
                    "train_srcc_before": srcc_before,
                    "train_srcc_after": srcc_after})
    _write_history(history_path, history)
    return history


def _write_history(path, history: list[dict]) -> None:
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
