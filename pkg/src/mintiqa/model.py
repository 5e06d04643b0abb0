"""Toy-scale multi-perspective preference model.

Structure: patch-embedding image encoder, token text encoder, a cross-modal
query transformer whose learnable queries self-attend jointly with text tokens
and cross-attend to image embeddings, N independent regression heads over the
mean-pooled queries, and an instruction branch (second query transformer fed
through a zero-initialized linear connection) driving a small causal answer
decoder.

Everything runs on the float64 autodiff kernel; no pretrained weights are
involved, so the connective architecture is what this module exercises.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .dataset import (CANONICAL_QUESTIONS, DEFAULT_VOCABULARIES, DIMENSIONS,
                      FACTOR_QUESTIONS)
from .segmentation import StyleLexicon, segment_rule_based
from .tensor import Tensor

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")

_TOKEN = re.compile(r"[a-z0-9&'-]+")

DEFAULT_HEAD_INSTRUCTIONS = (
    "how is the quality of the image",
    "how is the authenticity of the image",
    "how is the correspondence between the image and its text prompt",
)


class ConfigError(ValueError):
    pass


def default_vocab() -> list[str]:
    """Token list covering the level vocabularies and template questions."""
    words: dict[str, None] = {}
    for vocab in DEFAULT_VOCABULARIES.values():
        for token in vocab:
            for w in _TOKEN.findall(token.lower()):
                words[w] = None
    for q in list(CANONICAL_QUESTIONS.values()) + list(FACTOR_QUESTIONS.values()):
        for w in _TOKEN.findall(q.lower()):
            words[w] = None
    for w in ("a", "an", "the", "of", "is", "are", "this", "that", "it",
              "explain", "main", "problems", "style", "content", "atmosphere",
              "and", "in", "on", "with", "very", "not"):
        words[w] = None
    return list(words)


@dataclass
class ModelConfig:
    d_model: int = 32
    n_heads: int = 2
    n_image_layers: int = 2
    n_text_layers: int = 1
    n_qformer_layers: int = 1
    n_queries: int = 4
    patch_size: int = 8
    image_size: int = 32
    vocab: list[str] = field(default_factory=default_vocab)
    n_regressors: int = 3
    fix_rate: float = 0.7
    answer_max_len: int = 8
    max_text_len: int = 24
    head_names: list[str] = field(default_factory=lambda: list(DIMENSIONS))
    head_instructions: list[str] = field(
        default_factory=lambda: list(DEFAULT_HEAD_INSTRUCTIONS))
    use_segmentation: bool = True
    score_scale: float = 100.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by "
                              f"n_heads {self.n_heads}")
        if self.n_queries < 1 or self.n_regressors < 1:
            raise ConfigError("n_queries and n_regressors must be >= 1")
        if not (0.0 <= self.fix_rate <= 1.0):
            raise ConfigError(f"fix_rate {self.fix_rate} out of [0,1]")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(f"image_size {self.image_size} not divisible by "
                              f"patch_size {self.patch_size}")
        if len(self.head_names) < self.n_regressors:
            self.head_names = [f"head{i}" for i in range(self.n_regressors)]
        if len(self.head_instructions) < self.n_regressors:
            raise ConfigError("need one canonical instruction per regressor")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class Tokenizer:
    """Whitespace + lowercase tokenizer over a closed word list; OOV -> UNK."""

    def __init__(self, vocab: list[str]):
        self.id_to_word = list(SPECIALS) + list(vocab)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    def __len__(self) -> int:
        return len(self.id_to_word)

    def encode(self, text: str) -> list[int]:
        return [self.word_to_id.get(w, UNK) for w in _TOKEN.findall(text.lower())]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.id_to_word[i] for i in ids
                        if i not in (PAD, BOS, EOS))


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


class MintModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.tokenizer = Tokenizer(config.vocab)
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self._build()
        self.apply_fix_rate()

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------
    def _param(self, name: str, shape, std: float | None = None) -> Tensor:
        if std is None:
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            std = 1.0 / np.sqrt(fan_in)
        t = Tensor(self._rng.normal(0.0, std, size=shape), requires_grad=True)
        self.params[name] = t
        return t

    def _zeros_param(self, name: str, shape) -> Tensor:
        t = Tensor(np.zeros(shape), requires_grad=True)
        self.params[name] = t
        return t

    def _ones_param(self, name: str, shape) -> Tensor:
        t = Tensor(np.ones(shape), requires_grad=True)
        self.params[name] = t
        return t

    def _attn_params(self, prefix: str, d: int):
        for w in ("wq", "wk", "wv", "wo"):
            self._param(f"{prefix}.{w}", (d, d))
        for b in ("bq", "bk", "bv", "bo"):
            self._zeros_param(f"{prefix}.{b}", (d,))

    def _block_params(self, prefix: str, d: int):
        self._attn_params(f"{prefix}.attn", d)
        self._ones_param(f"{prefix}.ln1.g", (d,))
        self._zeros_param(f"{prefix}.ln1.b", (d,))
        self._param(f"{prefix}.ffn.w1", (d, 4 * d))
        self._zeros_param(f"{prefix}.ffn.b1", (4 * d,))
        self._param(f"{prefix}.ffn.w2", (4 * d, d))
        self._zeros_param(f"{prefix}.ffn.b2", (d,))
        self._ones_param(f"{prefix}.ln2.g", (d,))
        self._zeros_param(f"{prefix}.ln2.b", (d,))

    def _qformer_params(self, prefix: str, d: int, n_layers: int):
        self._param(f"{prefix}.queries", (self.config.n_queries, d))
        for i in range(n_layers):
            p = f"{prefix}.layer{i}"
            self._attn_params(f"{p}.self", d)
            self._attn_params(f"{p}.cross", d)
            self._ones_param(f"{p}.ln1.g", (d,))
            self._zeros_param(f"{p}.ln1.b", (d,))
            self._ones_param(f"{p}.ln2.g", (d,))
            self._zeros_param(f"{p}.ln2.b", (d,))
            self._param(f"{p}.ffn.w1", (d, 4 * d))
            self._zeros_param(f"{p}.ffn.b1", (4 * d,))
            self._param(f"{p}.ffn.w2", (4 * d, d))
            self._zeros_param(f"{p}.ffn.b2", (d,))
            self._ones_param(f"{p}.ln3.g", (d,))
            self._zeros_param(f"{p}.ln3.b", (d,))

    def _build(self):
        cfg = self.config
        d = cfg.d_model
        # image encoder
        self._param("image.patch.w", (cfg.patch_size ** 2 * 3, d))
        self._zeros_param("image.patch.b", (d,))
        self._param("image.pos", (cfg.n_patches, d))
        for i in range(cfg.n_image_layers):
            self._block_params(f"image.layer{i}", d)
        # text encoder
        vocab_size = len(self.tokenizer)
        self._param("text.tok", (vocab_size, d))
        self._param("text.pos", (cfg.max_text_len, d))
        for i in range(cfg.n_text_layers):
            self._block_params(f"text.layer{i}", d)
        # score q-former
        self._qformer_params("qf", d, cfg.n_qformer_layers)
        # regression heads; first layer is widened to accept an extra
        # instruction-aware half, zero-initialized so the plain score path is
        # unaffected until that half carries signal
        for i in range(cfg.n_regressors):
            w1 = np.zeros((2 * d, d))
            w1[:d] = self._rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
            self.params[f"head{i}.w1"] = Tensor(w1, requires_grad=True)
            self._zeros_param(f"head{i}.b1", (d,))
            self._param(f"head{i}.w2", (d, 1))
            self._zeros_param(f"head{i}.b2", (1,))
        # instruction branch
        self._zeros_param("zconv.w", (d, d))
        self._zeros_param("zconv.b", (d,))
        self._qformer_params("iqf", d, cfg.n_qformer_layers)
        self._param("adapter.w", (d, d))
        self._zeros_param("adapter.b", (d,))
        # answer decoder
        self._param("dec.tok", (vocab_size, d))
        max_pos = cfg.n_queries + cfg.max_text_len + cfg.answer_max_len + 2
        self._param("dec.pos", (max_pos, d))
        self._block_params("dec.layer0", d)
        self._param("dec.out.w", (d, vocab_size))
        self._zeros_param("dec.out.b", (vocab_size,))

    def apply_fix_rate(self):
        """Freeze the leading image-encoder blocks (and embeddings) per fix rate."""
        cfg = self.config
        n_frozen = int(np.floor(cfg.fix_rate * cfg.n_image_layers))
        frozen_prefixes = [f"image.layer{i}." for i in range(n_frozen)]
        embeddings_frozen = cfg.fix_rate > 0.0
        for name, p in self.params.items():
            if name.startswith("image."):
                if name.startswith(("image.patch", "image.pos")):
                    p.requires_grad = not embeddings_frozen
                else:
                    p.requires_grad = not any(name.startswith(pref)
                                              for pref in frozen_prefixes)

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if p.requires_grad}

    def set_trainable(self, predicate) -> None:
        """Set requires_grad per parameter name, then re-apply the fix rate."""
        for name, p in self.params.items():
            p.requires_grad = bool(predicate(name))
        n_frozen = int(np.floor(self.config.fix_rate * self.config.n_image_layers))
        for name, p in self.params.items():
            if name.startswith(("image.patch", "image.pos")):
                if self.config.fix_rate > 0.0:
                    p.requires_grad = False
            elif name.startswith("image.layer"):
                layer = int(name.split(".")[1].removeprefix("layer"))
                if layer < n_frozen:
                    p.requires_grad = False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ConfigError(f"checkpoint parameter mismatch: {sorted(missing)[:5]}")
        for n, p in self.params.items():
            if p.data.shape != state[n].shape:
                raise ConfigError(f"shape mismatch for {n}: "
                                  f"{p.data.shape} vs {state[n].shape}")
            p.data = state[n].astype(np.float64).copy()

    # ------------------------------------------------------------------
    # building blocks
    # ------------------------------------------------------------------
    def _attend(self, prefix: str, q_in: Tensor, kv_in: Tensor,
                mask: np.ndarray | None = None) -> Tensor:
        """Multi-head scaled dot-product attention; ``mask`` is additive."""
        p = self.params
        d = self.config.d_model
        nh = self.config.n_heads
        dh = d // nh
        q = T.add(T.matmul(q_in, p[f"{prefix}.wq"]), p[f"{prefix}.bq"])
        k = T.add(T.matmul(kv_in, p[f"{prefix}.wk"]), p[f"{prefix}.bk"])
        v = T.add(T.matmul(kv_in, p[f"{prefix}.wv"]), p[f"{prefix}.bv"])
        heads = []
        for h in range(nh):
            qh = T.slice_(q, 1, h * dh, (h + 1) * dh)
            kh = T.slice_(k, 1, h * dh, (h + 1) * dh)
            vh = T.slice_(v, 1, h * dh, (h + 1) * dh)
            scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(dh))
            if mask is not None:
                scores = T.add_const(scores, mask)
            heads.append(T.matmul(T.softmax(scores), vh))
        out = T.concat(heads, axis=1)
        return T.add(T.matmul(out, p[f"{prefix}.wo"]), p[f"{prefix}.bo"])

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = T.gelu(T.add(T.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        return T.add(T.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])

    def _block(self, prefix: str, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self._ln(f"{prefix}.ln1", x)
        x = T.add(x, self._attend(f"{prefix}.attn", h, h, mask))
        return T.add(x, self._ffn(f"{prefix}.ffn", self._ln(f"{prefix}.ln2", x)))

    # ------------------------------------------------------------------
    # encoders
    # ------------------------------------------------------------------
    def encode_image(self, pixels: np.ndarray) -> Tensor:
        cfg = self.config
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.shape != (cfg.image_size, cfg.image_size, 3):
            raise T.ShapeError(f"expected image {cfg.image_size}x{cfg.image_size}x3, "
                               f"got {pixels.shape}")
        ps = cfg.patch_size
        n = cfg.image_size // ps
        patches = (pixels.reshape(n, ps, n, ps, 3)
                   .transpose(0, 2, 1, 3, 4)
                   .reshape(n * n, ps * ps * 3))
        x = T.add(T.add(T.matmul(Tensor(patches), self.params["image.patch.w"]),
                        self.params["image.patch.b"]),
                  self.params["image.pos"])
        for i in range(cfg.n_image_layers):
            x = self._block(f"image.layer{i}", x)
        return x

    def encode_text(self, text: str) -> tuple[Tensor, np.ndarray]:
        """Returns (embeddings [max_text_len x d], key padding mask row)."""
        cfg = self.config
        ids = self.tokenizer.encode(text)
        if not ids:
            raise ConfigError(f"text tokenizes to nothing: {text!r}")
        ids = ids[:cfg.max_text_len]
        pad_mask = np.zeros(cfg.max_text_len)
        pad_mask[len(ids):] = -1e9
        ids = ids + [PAD] * (cfg.max_text_len - len(ids))
        x = T.add(T.embedding(self.params["text.tok"], ids), self.params["text.pos"])
        attn_mask = np.tile(pad_mask, (cfg.max_text_len, 1))
        for i in range(cfg.n_text_layers):
            x = self._block(f"text.layer{i}", x, attn_mask)
        return x, pad_mask

    # ------------------------------------------------------------------
    # q-formers
    # ------------------------------------------------------------------
    def _qformer(self, prefix: str, queries: Tensor, text: Tensor,
                 text_mask: np.ndarray, image_emb: Tensor) -> Tensor:
        cfg = self.config
        K = cfg.n_queries
        n_total = K + text.shape[0]
        # queries attend everywhere; text key positions honor the padding mask
        self_mask = np.concatenate([np.zeros((n_total, K)),
                                    np.tile(text_mask, (n_total, 1))], axis=1)
        h = T.concat([queries, text], axis=0)
        for i in range(cfg.n_qformer_layers):
            p = f"{prefix}.layer{i}"
            normed = self._ln(f"{p}.ln1", h)
            h = T.add(h, self._attend(f"{p}.self", normed, normed, self_mask))
            q = T.slice_(h, 0, 0, K)
            txt = T.slice_(h, 0, K, n_total)
            q = T.add(q, self._attend(f"{p}.cross", self._ln(f"{p}.ln2", q), image_emb))
            h = T.concat([q, txt], axis=0)
            h = T.add(h, self._ffn(f"{p}.ffn", self._ln(f"{p}.ln3", h)))
        return T.slice_(h, 0, 0, K)

    def qformer_forward(self, text: Tensor, text_mask: np.ndarray,
                        image_emb: Tensor) -> Tensor:
        return self._qformer("qf", self.params["qf.queries"], text, text_mask,
                             image_emb)

    # ------------------------------------------------------------------
    # score path
    # ------------------------------------------------------------------
    def _prompt_text(self, prompt: str) -> str:
        if self.config.use_segmentation:
            return segment_rule_based(prompt).composed
        return prompt

    def score_queries(self, prompt: str, pixels: np.ndarray) -> Tensor:
        text, mask = self.encode_text(self._prompt_text(prompt))
        image_emb = self.encode_image(pixels)
        return self.qformer_forward(text, mask, image_emb)

    def _head(self, i: int, features: Tensor) -> Tensor:
        """features: [1 x 2d] -> scalar score tensor [1 x 1]."""
        p = self.params
        h = T.gelu(T.add(T.matmul(features, p[f"head{i}.w1"]), p[f"head{i}.b1"]))
        out = T.add(T.matmul(h, p[f"head{i}.w2"]), p[f"head{i}.b2"])
        return T.scale(out, self.config.score_scale)

    def _pooled(self, queries: Tensor) -> Tensor:
        return T.reshape(T.mean(queries, axis=0), (1, self.config.d_model))

    def head_scores(self, pooled: Tensor,
                    instruction_pooled: list[Tensor] | None = None) -> Tensor:
        """Scores from all heads; the instruction half defaults to zeros."""
        d = self.config.d_model
        outs = []
        for i in range(self.config.n_regressors):
            extra = (instruction_pooled[i] if instruction_pooled is not None
                     else _zeros((1, d)))
            outs.append(self._head(i, T.concat([pooled, extra], axis=1)))
        return T.reshape(T.concat(outs, axis=1), (self.config.n_regressors,))

    def predict_scores(self, prompt: str, pixels: np.ndarray) -> Tensor:
        return self.head_scores(self._pooled(self.score_queries(prompt, pixels)))

    # ------------------------------------------------------------------
    # instruction branch
    # ------------------------------------------------------------------
    def instruction_forward(self, prompt: str, pixels: np.ndarray,
                            instruction: str,
                            _cache: dict | None = None) -> Tensor:
        p = self.params
        if _cache is not None and "score_q" in _cache:
            score_q = _cache["score_q"]
            image_emb = _cache["image_emb"]
        else:
            image_emb = self.encode_image(pixels)
            text, mask = self.encode_text(self._prompt_text(prompt))
            score_q = self.qformer_forward(text, mask, image_emb)
            if _cache is not None:
                _cache["score_q"] = score_q
                _cache["image_emb"] = image_emb
        carried = T.add(T.matmul(score_q, p["zconv.w"]), p["zconv.b"])
        init_q = T.add(p["iqf.queries"], carried)
        instr, instr_mask = self.encode_text(instruction)
        return self._qformer("iqf", init_q, instr, instr_mask, image_emb)

    def _decoder_logits(self, prefix_rows: Tensor, token_ids: list[int]) -> Tensor:
        """Causal decoder over [adapted representations; tokens]; returns
        logits for every position (rows align with the input sequence)."""
        p = self.params
        K = prefix_rows.shape[0]
        n = K + len(token_ids)
        max_pos = p["dec.pos"].shape[0]
        if n > max_pos:
            raise ConfigError(f"decoder sequence {n} exceeds capacity {max_pos}")
        tok = T.embedding(p["dec.tok"], token_ids)
        x = T.concat([prefix_rows, tok], axis=0)
        x = T.add(x, T.slice_(p["dec.pos"], 0, 0, n))
        causal = np.triu(np.full((n, n), -1e9), k=1)
        x = self._block("dec.layer0", x, causal)
        return T.add(T.matmul(x, p["dec.out.w"]), p["dec.out.b"])

    def _adapted_prefix(self, reps: Tensor) -> Tensor:
        p = self.params
        return T.add(T.matmul(reps, p["adapter.w"]), p["adapter.b"])

    def answer_loss(self, prompt: str, pixels: np.ndarray, instruction: str,
                    answer_text: str) -> Tensor:
        """Next-token cross-entropy on the answer tokens only."""
        reps = self.instruction_forward(prompt, pixels, instruction)
        prefix = self._adapted_prefix(reps)
        instr_ids = self.tokenizer.encode(instruction)[:self.config.max_text_len]
        ans_ids = self.tokenizer.encode(answer_text)[:self.config.answer_max_len - 1]
        seq = instr_ids + [BOS] + ans_ids + [EOS]
        logits = self._decoder_logits(prefix, seq)
        K = self.config.n_queries
        start = K + len(instr_ids)  # position of BOS row predicts first answer token
        pred_rows = T.slice_(logits, 0, start, start + len(ans_ids) + 1)
        targets = ans_ids + [EOS]
        return T.cross_entropy(pred_rows, targets)

    def answer(self, prompt: str, pixels: np.ndarray, instruction: str) -> str:
        """Greedy decoding; deterministic given parameters."""
        reps = self.instruction_forward(prompt, pixels, instruction)
        prefix = self._adapted_prefix(reps)
        instr_ids = self.tokenizer.encode(instruction)[:self.config.max_text_len]
        generated: list[int] = []
        for _ in range(self.config.answer_max_len):
            seq = instr_ids + [BOS] + generated
            logits = self._decoder_logits(prefix, seq)
            last = logits.data[-1]
            nxt = int(np.argmax(last))
            if nxt == EOS:
                break
            generated.append(nxt)
        return self.tokenizer.decode(generated)

    # ------------------------------------------------------------------
    # feedback path
    # ------------------------------------------------------------------
    def feedback_scores(self, prompt: str, pixels: np.ndarray) -> Tensor:
        cache: dict = {}
        instr_pooled = []
        for i in range(self.config.n_regressors):
            reps = self.instruction_forward(prompt, pixels,
                                            self.config.head_instructions[i],
                                            _cache=cache)
            instr_pooled.append(self._pooled(reps))
        pooled = self._pooled(cache["score_q"])
        return self.head_scores(pooled, instr_pooled)
