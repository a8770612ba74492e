"""Toy transformer family for primitive and constraint sequences.

Three model kinds share one decoder skeleton:

* ``PrimitiveModel`` — decoder-only over primitive triples.
* ``ConstraintModel`` — encoder over primitive triples, decoder over
  constraint triples with cross-attention; the output head is a pointer:
  one softmax over reserved-token embeddings plus the encoder states of the
  designated sub-primitive token indices.
* ``ImagePrimitiveModel`` — primitive decoder cross-attending into a patch
  encoder.

Every token is embedded as the element-wise sum of its value, ID, and
position embeddings; order information travels in the position token, so no
extra positional encoding is used.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .. import tokenizer as tk
from .autodiff import (
    Tensor,
    add,
    concat,
    constant,
    cross_entropy_logits,
    embedding,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mul,
    parameter,
    reshape,
    scale,
    softmax,
    token_nll_nats,
    transpose,
)

__all__ = [
    "ModelConfig",
    "OutOfVocab",
    "SeqTooLong",
    "DimMismatch",
    "ContextMismatch",
    "PrimitiveModel",
    "ConstraintModel",
    "ImagePrimitiveModel",
    "pointer_logits",
    "pad_triples",
    "REFERENCE_SCALE",
    "DESK_SCALE",
]


class OutOfVocab(ValueError):
    pass


class SeqTooLong(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class ContextMismatch(ValueError):
    pass


# (layers, heads, embed_dim)
REFERENCE_SCALE = (12, 8, 256)
DESK_SCALE = (2, 2, 64)

_NEG = -1e30  # additive mask value; large-negative instead of -inf keeps logsumexp NaN-free


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 2
    embed_dim: int = 64
    max_seq_len: int = 130
    value_vocab: int = tk.PRIMITIVE_VOCAB_SIZE
    id_vocab: int = tk.PRIMITIVE_ID_SIZE
    pos_vocab: int = 17
    cross_attention: bool = False

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")


def _init(rng, *shape):
    return parameter(rng.normal(0.0, 0.02, size=shape))


def _zeros(*shape):
    return parameter(np.zeros(shape))


def _ones(*shape):
    return parameter(np.ones(shape))


def _block_params(rng, cfg: ModelConfig, prefix: str, params: dict):
    d = cfg.embed_dim
    for nm in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.attn.{nm}"] = _init(rng, d, d)
        params[f"{prefix}.attn.b{nm[1]}"] = _zeros(d)
    params[f"{prefix}.ln1.g"] = _ones(d)
    params[f"{prefix}.ln1.b"] = _zeros(d)
    if cfg.cross_attention:
        for nm in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.xattn.{nm}"] = _init(rng, d, d)
            params[f"{prefix}.xattn.b{nm[1]}"] = _zeros(d)
        params[f"{prefix}.lnx.g"] = _ones(d)
        params[f"{prefix}.lnx.b"] = _zeros(d)
    params[f"{prefix}.mlp.w1"] = _init(rng, d, 4 * d)
    params[f"{prefix}.mlp.b1"] = _zeros(4 * d)
    params[f"{prefix}.mlp.w2"] = _init(rng, 4 * d, d)
    params[f"{prefix}.mlp.b2"] = _zeros(d)
    params[f"{prefix}.ln2.g"] = _ones(d)
    params[f"{prefix}.ln2.b"] = _zeros(d)


def _stack_params(rng, cfg: ModelConfig, prefix: str) -> dict:
    params: dict[str, Tensor] = {}
    params[f"{prefix}.value_emb"] = _init(rng, cfg.value_vocab, cfg.embed_dim)
    params[f"{prefix}.id_emb"] = _init(rng, cfg.id_vocab, cfg.embed_dim)
    params[f"{prefix}.pos_emb"] = _init(rng, cfg.pos_vocab, cfg.embed_dim)
    for i in range(cfg.layers):
        _block_params(rng, cfg, f"{prefix}.layer{i}", params)
    params[f"{prefix}.lnf.g"] = _ones(cfg.embed_dim)
    params[f"{prefix}.lnf.b"] = _zeros(cfg.embed_dim)
    return params


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _attention(params, prefix, x, heads, mask_const=None, kv=None):
    """Multi-head attention; kv defaults to x (self-attention).

    mask_const is an additive numpy array broadcastable to the score shape
    (B, H, Lq, Lk); large-negative entries disable positions.
    """
    src = kv if kv is not None else x
    B, Lq, D = x.shape
    Lk = src.shape[1]
    dh = D // heads
    q = _linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = _linear(src, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = _linear(src, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    q = transpose(reshape(q, (B, Lq, heads, dh)), (0, 2, 1, 3))
    k = transpose(reshape(k, (B, Lk, heads, dh)), (0, 2, 1, 3))
    v = transpose(reshape(v, (B, Lk, heads, dh)), (0, 2, 1, 3))
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if mask_const is not None:
        scores = add(scores, constant(mask_const))
    attn = softmax(scores, axis=-1)
    out = matmul(attn, v)  # (B, H, Lq, dh)
    out = reshape(transpose(out, (0, 2, 1, 3)), (B, Lq, D))
    return _linear(out, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _block(params, prefix, x, cfg: ModelConfig, self_mask, memory=None, mem_mask=None):
    h = layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = add(x, _attention(params, f"{prefix}.attn", h, cfg.heads, self_mask))
    if memory is not None:
        h = layer_norm(x, params[f"{prefix}.lnx.g"], params[f"{prefix}.lnx.b"])
        x = add(x, _attention(params, f"{prefix}.xattn", h, cfg.heads, mem_mask, kv=memory))
    h = layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = gelu(_linear(h, params[f"{prefix}.mlp.w1"], params[f"{prefix}.mlp.b1"]))
    h = _linear(h, params[f"{prefix}.mlp.w2"], params[f"{prefix}.mlp.b2"])
    return add(x, h)


def _check_triples(cfg: ModelConfig, triples: np.ndarray):
    if triples.ndim != 3 or triples.shape[-1] != 3:
        raise DimMismatch(f"expected (B, L, 3) triples, got {triples.shape}")
    if triples.shape[1] > cfg.max_seq_len:
        raise SeqTooLong(f"sequence length {triples.shape[1]} > {cfg.max_seq_len}")
    for band, vocab, name in (
        (triples[..., 0], cfg.value_vocab, "value"),
        (triples[..., 1], cfg.id_vocab, "id"),
        (triples[..., 2], cfg.pos_vocab, "position"),
    ):
        if band.min() < 0 or band.max() >= vocab:
            raise OutOfVocab(
                f"{name} token outside vocab of {vocab}: range "
                f"[{band.min()}, {band.max()}]"
            )


def embed_triples(params, prefix, triples: np.ndarray) -> Tensor:
    """Element-wise sum of value, ID, and position embeddings: (B, L, D)."""
    ev = embedding(params[f"{prefix}.value_emb"], triples[..., 0])
    ei = embedding(params[f"{prefix}.id_emb"], triples[..., 1])
    ep = embedding(params[f"{prefix}.pos_emb"], triples[..., 2])
    return add(add(ev, ei), ep)


def _stack_forward(params, prefix, cfg, x, self_mask, memory=None, mem_mask=None):
    for i in range(cfg.layers):
        x = _block(params, f"{prefix}.layer{i}", x, cfg, self_mask, memory, mem_mask)
    return layer_norm(x, params[f"{prefix}.lnf.g"], params[f"{prefix}.lnf.b"])


def _causal_mask(L: int) -> np.ndarray:
    m = np.zeros((L, L))
    m[np.triu_indices(L, 1)] = _NEG
    return m


def _key_pad_mask(real: np.ndarray) -> np.ndarray:
    """(B, Lk) boolean of real positions -> (B, 1, 1, Lk) additive mask."""
    return np.where(real[:, None, None, :], 0.0, _NEG)


def pad_triples(seqs: list[list[tk.TokenTriple]]) -> tuple[np.ndarray, np.ndarray]:
    """Pad triple sequences into (B, L, 3) ints and a (B, L) real-token mask."""
    L = max(len(s) for s in seqs)
    out = np.zeros((len(seqs), L, 3), dtype=int)
    real = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        for j, t in enumerate(s):
            out[i, j] = (t.value, t.id, t.position)
        real[i, : len(s)] = True
    return out, real


def pointer_logits(decoder_state, type_embeddings, subprim_encodings) -> np.ndarray:
    """Dot-product logits of one decoder state against the concatenated
    candidate rows (constraint types, then sub-primitive encodings)."""
    decoder_state = np.asarray(decoder_state, dtype=float)
    cands = [np.asarray(type_embeddings, dtype=float)]
    subprim_encodings = np.asarray(subprim_encodings, dtype=float)
    if len(subprim_encodings):
        cands.append(subprim_encodings)
    cand = np.concatenate(cands, axis=0)
    if decoder_state.ndim != 1 or cand.ndim != 2 or cand.shape[1] != decoder_state.shape[0]:
        raise DimMismatch(
            f"decoder state {decoder_state.shape} vs candidates {cand.shape}"
        )
    return cand @ decoder_state


class _Model:
    """Shared parameter bookkeeping for all model kinds."""

    kind = "base"

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self.params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint missing array {k!r}")
            if arrays[k].shape != p.data.shape:
                raise ValueError(
                    f"array {k!r} shape {arrays[k].shape} != expected {p.data.shape}"
                )
            p.data = np.asarray(arrays[k], dtype=np.float64)

    def meta(self) -> dict:
        raise NotImplementedError


class PrimitiveModel(_Model):
    """Decoder-only model over the primitive token stream."""

    kind = "primitive"

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        self.params = _stack_params(rng, self.cfg, "dec")
        self.params["out.w"] = _init(rng, self.cfg.embed_dim, self.cfg.value_vocab)
        self.params["out.b"] = _zeros(self.cfg.value_vocab)

    def meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.cfg)}

    def make_uniform(self):
        """Zero the output head so every prediction is exactly uniform."""
        self.params["out.w"].data[:] = 0.0
        self.params["out.b"].data[:] = 0.0
        return self

    def forward(self, triples: np.ndarray, real: np.ndarray | None = None,
                memory: Tensor | None = None, mem_real: np.ndarray | None = None) -> Tensor:
        """Causal logits (B, L, V) over next value tokens."""
        _check_triples(self.cfg, triples)
        B, L, _ = triples.shape
        mask = _causal_mask(L)
        if real is not None:
            mask = mask[None, None, :, :] + _key_pad_mask(real)
        mem_mask = _key_pad_mask(mem_real) if mem_real is not None else None
        x = embed_triples(self.params, "dec", triples)
        x = _stack_forward(self.params, "dec", self.cfg, x, mask, memory, mem_mask)
        return _linear(x, self.params["out.w"], self.params["out.b"])

    def loss(self, triples: np.ndarray, real: np.ndarray) -> Tensor:
        logits = self.forward(triples[:, :-1], real[:, :-1])
        targets = triples[:, 1:, 0]
        return cross_entropy_logits(logits, targets, real[:, 1:])

    def sequence_nll_nats(self, seq: list[tk.TokenTriple]) -> np.ndarray:
        """Per-predicted-token NLL of one full sequence (teacher forcing)."""
        triples, real = pad_triples([seq])
        logits = self.forward(triples[:, :-1], real[:, :-1])
        return token_nll_nats(logits.data[0], triples[0, 1:, 0])


class ImagePrimitiveModel(_Model):
    """Primitive decoder cross-attending into a ViT-style patch encoder."""

    kind = "image_conditional"

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0,
                 patch_dim: int = 256, patch_count: int = 64):
        super().__init__()
        base = cfg or ModelConfig()
        self.cfg = ModelConfig(
            layers=base.layers, heads=base.heads, embed_dim=base.embed_dim,
            max_seq_len=base.max_seq_len, value_vocab=base.value_vocab,
            id_vocab=base.id_vocab, pos_vocab=base.pos_vocab, cross_attention=True,
        )
        self.patch_dim = patch_dim
        self.patch_count = patch_count
        rng = np.random.default_rng(seed)
        self.params = _stack_params(rng, self.cfg, "dec")
        self.params["out.w"] = _init(rng, self.cfg.embed_dim, self.cfg.value_vocab)
        self.params["out.b"] = _zeros(self.cfg.value_vocab)
        enc_cfg = ModelConfig(
            layers=self.cfg.layers, heads=self.cfg.heads, embed_dim=self.cfg.embed_dim,
            max_seq_len=patch_count, value_vocab=1, id_vocab=1, pos_vocab=1,
        )
        self._enc_cfg = enc_cfg
        enc = _stack_params(rng, enc_cfg, "enc")
        # patch encoder has no token tables; replace them with projections
        for k in ("enc.value_emb", "enc.id_emb", "enc.pos_emb"):
            del enc[k]
        self.params.update(enc)
        self.params["patch.w"] = _init(rng, patch_dim, self.cfg.embed_dim)
        self.params["patch.b"] = _zeros(self.cfg.embed_dim)
        self.params["patch.pos"] = _init(rng, patch_count, self.cfg.embed_dim)

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "config": asdict(self.cfg),
            "patch_dim": self.patch_dim,
            "patch_count": self.patch_count,
        }

    def encode_image(self, patches: np.ndarray) -> Tensor:
        """patches (B, 64, 256) -> context embeddings (B, 64, D)."""
        if patches.ndim != 3 or patches.shape[1:] != (self.patch_count, self.patch_dim):
            raise ContextMismatch(
                f"expected (B, {self.patch_count}, {self.patch_dim}) patches, "
                f"got {patches.shape}"
            )
        x = _linear(constant(patches), self.params["patch.w"], self.params["patch.b"])
        x = add(x, self.params["patch.pos"])
        return _stack_forward(self.params, "enc", self._enc_cfg, x, None)

    def forward(self, triples: np.ndarray, real: np.ndarray | None,
                patches: np.ndarray) -> Tensor:
        memory = self.encode_image(patches)
        _check_triples(self.cfg, triples)
        B, L, _ = triples.shape
        mask = _causal_mask(L)
        if real is not None:
            mask = mask[None, None, :, :] + _key_pad_mask(real)
        x = embed_triples(self.params, "dec", triples)
        x = _stack_forward(self.params, "dec", self.cfg, x, mask, memory, None)
        return _linear(x, self.params["out.w"], self.params["out.b"])

    def loss(self, triples: np.ndarray, real: np.ndarray, patches: np.ndarray) -> Tensor:
        logits = self.forward(triples[:, :-1], real[:, :-1], patches)
        return cross_entropy_logits(logits, triples[:, 1:, 0], real[:, 1:])


class ConstraintModel(_Model):
    """Encoder-decoder over (primitive, constraint) streams with a pointer
    output head shared between constraint types and sub-primitive refs."""

    kind = "constraint"

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0,
                 tok_cfg: tk.TokenizerConfig = tk.DEFAULT_CONFIG):
        super().__init__()
        base = cfg or ModelConfig()
        self.tok_cfg = tok_cfg
        self.enc_cfg = ModelConfig(
            layers=base.layers, heads=base.heads, embed_dim=base.embed_dim,
            max_seq_len=tok_cfg.max_primitive_tokens,
            value_vocab=tk.PRIMITIVE_VOCAB_SIZE, id_vocab=tk.PRIMITIVE_ID_SIZE,
            pos_vocab=tok_cfg.max_primitives + 1,
        )
        self.dec_cfg = ModelConfig(
            layers=base.layers, heads=base.heads, embed_dim=base.embed_dim,
            max_seq_len=tok_cfg.max_constraint_tokens,
            value_vocab=tk.REF_BASE,  # lookup rows; references embed via encoder
            id_vocab=tk.CONSTRAINT_ID_SIZE,
            pos_vocab=tok_cfg.max_constraints + 1,
            cross_attention=True,
        )
        rng = np.random.default_rng(seed)
        self.params = _stack_params(rng, self.enc_cfg, "enc")
        self.params.update(_stack_params(rng, self.dec_cfg, "dec"))

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "config": asdict(
                ModelConfig(layers=self.enc_cfg.layers, heads=self.enc_cfg.heads,
                            embed_dim=self.enc_cfg.embed_dim)
            ),
            "tokenizer": asdict(self.tok_cfg),
        }

    def encode_primitives(self, prim_triples: np.ndarray, prim_real: np.ndarray) -> Tensor:
        _check_triples(self.enc_cfg, prim_triples)
        x = embed_triples(self.params, "enc", prim_triples)
        return _stack_forward(
            self.params, "enc", self.enc_cfg, x, _key_pad_mask(prim_real)
        )

    def _decoder_value_embedding(self, con_triples, enc_out, prim_len):
        """Reserved values use the lookup table; reference values reuse the
        encoder output at the pointed-to token index (scaled by 1/sqrt(D) so
        both bands enter at comparable magnitude)."""
        v = con_triples[..., 0]
        lookup = embedding(self.params["dec.value_emb"], np.minimum(v, tk.REF_BASE - 1))
        refs = gather_rows(enc_out, np.clip(v - tk.REF_BASE, 0, prim_len - 1))
        refs = scale(refs, 1.0 / np.sqrt(self.dec_cfg.embed_dim))
        sel = constant((v >= tk.REF_BASE).astype(float)[..., None])
        keep = constant((v < tk.REF_BASE).astype(float)[..., None])
        return add(mul(lookup, keep), mul(refs, sel))

    def forward(
        self,
        prim_triples: np.ndarray,
        prim_real: np.ndarray,
        con_triples: np.ndarray,
        con_real: np.ndarray,
        designated: np.ndarray,
        designated_real: np.ndarray,
    ) -> tuple[Tensor, np.ndarray]:
        """Pointer logits (B, Lc, 16 + Rmax) plus the candidate mask.

        ``designated`` (B, Rmax) holds flattened primitive-token indices,
        padded; ``designated_real`` marks real entries.
        """
        enc_out = self.encode_primitives(prim_triples, prim_real)
        if con_triples.shape[1] > self.dec_cfg.max_seq_len:
            raise SeqTooLong(
                f"constraint length {con_triples.shape[1]} > {self.dec_cfg.max_seq_len}"
            )
        max_value = tk.REF_BASE + prim_triples.shape[1]
        if con_triples[..., 0].max(initial=0) >= max_value:
            raise OutOfVocab(
                f"constraint value token >= {max_value} (references past the "
                "primitive stream)"
            )
        if con_triples[..., 1].max(initial=0) >= self.dec_cfg.id_vocab:
            raise OutOfVocab("constraint id token outside vocab")
        if con_triples[..., 2].max(initial=0) >= self.dec_cfg.pos_vocab:
            raise OutOfVocab("constraint position token outside vocab")
        B, Lc, _ = con_triples.shape
        mask = _causal_mask(Lc)[None, None, :, :] + _key_pad_mask(con_real)
        ev = self._decoder_value_embedding(con_triples, enc_out, prim_triples.shape[1])
        ei = embedding(self.params["dec.id_emb"], con_triples[..., 1])
        ep = embedding(self.params["dec.pos_emb"], con_triples[..., 2])
        x = add(add(ev, ei), ep)
        dec = _stack_forward(
            self.params, "dec", self.dec_cfg, x, mask,
            memory=enc_out, mem_mask=_key_pad_mask(prim_real),
        )
        reserved = reshape(
            self.params["dec.value_emb"], (1, tk.REF_BASE, self.dec_cfg.embed_dim)
        )
        reserved = add(reserved, constant(np.zeros((B, 1, 1))))  # broadcast to batch
        ref_cands = scale(
            gather_rows(enc_out, designated), 1.0 / np.sqrt(self.dec_cfg.embed_dim)
        )
        cands = concat([reserved, ref_cands], axis=1)
        logits = matmul(dec, transpose(cands, (0, 2, 1)))
        cand_mask = np.concatenate(
            [np.ones((B, tk.REF_BASE), dtype=bool), designated_real], axis=1
        )
        logits = add(logits, constant(np.where(cand_mask, 0.0, _NEG)[:, None, :]))
        return logits, cand_mask

    def loss(self, batch) -> Tensor:
        """batch from seqmodel.data.constraint_batch."""
        logits, _ = self.forward(
            batch["prim_triples"], batch["prim_real"],
            batch["con_triples"][:, :-1], batch["con_real"][:, :-1],
            batch["designated"], batch["designated_real"],
        )
        return cross_entropy_logits(logits, batch["targets"], batch["target_mask"])
