import math

import numpy as np
import pytest

from sketchforge import tokenizer as tk
from sketchforge.core import Sketch, line, normalize_sketch
from sketchforge.handdraw import NoiseConfig, patchify, simulate_hand_drawing
from sketchforge.pipeline import generate_corpus, prepare_corpus
from sketchforge.seqmodel import (
    AdamW,
    ConstraintModel,
    ContextMismatch,
    DimMismatch,
    ImagePrimitiveModel,
    ModelConfig,
    NonFiniteLoss,
    OutOfVocab,
    PrimitiveModel,
    SamplerConfig,
    SeqTooLong,
    TrainConfig,
    generate_constraints,
    generate_primitives,
    load_checkpoint,
    nucleus_sample,
    nucleus_support,
    one_cycle_lr,
    pad_triples,
    pointer_logits,
    save_checkpoint,
    train,
)
from sketchforge.seqmodel.data import constraint_batch, constraint_example
from sketchforge.seqmodel.autodiff import (
    Tensor,
    cross_entropy_logits,
    gelu,
    layer_norm,
    matmul,
    parameter,
    softmax,
)


@pytest.fixture(scope="module")
def rect_corpus():
    return prepare_corpus(generate_corpus("rectangles", 24, seed=3))


@pytest.fixture(scope="module")
def tiny_model():
    return PrimitiveModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=0)


class TestAutodiff:
    def test_matmul_grad(self):
        rng = np.random.default_rng(0)
        a = parameter(rng.normal(size=(3, 4)))
        b = parameter(rng.normal(size=(4, 2)))
        y = matmul(a, b)
        loss = cross_entropy_logits(y, np.array([0, 1, 0]), np.ones(3))
        loss.backward()
        assert a.grad.shape == (3, 4)
        assert b.grad.shape == (4, 2)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        x = parameter(rng.normal(size=(5, 7)))
        y = softmax(x)
        assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_gelu_layernorm_fd(self):
        rng = np.random.default_rng(2)
        x = parameter(rng.normal(size=(4, 6)))
        g = parameter(np.ones(6))
        b = parameter(np.zeros(6))

        def loss_of():
            h = gelu(layer_norm(x, g, b))
            return cross_entropy_logits(h, np.zeros(4, dtype=int), np.ones(4))

        loss = loss_of()
        loss.backward()
        analytic = x.grad[1, 2]
        h = 1e-5
        x.data[1, 2] += h
        lp = float(loss_of().data)
        x.data[1, 2] -= 2 * h
        lm = float(loss_of().data)
        x.data[1, 2] += h
        assert abs((lp - lm) / (2 * h) - analytic) < 1e-6


class TestEmbedding:
    def test_zero_tables_zero_output(self):
        m = PrimitiveModel(ModelConfig(layers=1, heads=1, embed_dim=8), seed=0)
        for k in ("dec.value_emb", "dec.id_emb", "dec.pos_emb"):
            m.params[k].data[:] = 0.0
        from sketchforge.seqmodel.models import embed_triples

        triples = np.array([[[1, 0, 0], [5, 1, 1]]])
        out = embed_triples(m.params, "dec", triples)
        assert np.all(out.data == 0.0)

    def test_elementwise_sum(self):
        m = PrimitiveModel(ModelConfig(layers=1, heads=1, embed_dim=8), seed=0)
        from sketchforge.seqmodel.models import embed_triples

        t1 = np.array([[[5, 1, 1]]])
        t2 = np.array([[[5, 1, 2]]])  # only position differs
        e1 = embed_triples(m.params, "dec", t1).data[0, 0]
        e2 = embed_triples(m.params, "dec", t2).data[0, 0]
        dpos = m.params["dec.pos_emb"].data[2] - m.params["dec.pos_emb"].data[1]
        assert np.allclose(e2 - e1, dpos)

    def test_out_of_vocab(self, tiny_model):
        bad = np.array([[[999, 0, 0]]])
        with pytest.raises(OutOfVocab):
            tiny_model.forward(bad)

    def test_seq_too_long(self, tiny_model):
        n = tiny_model.cfg.max_seq_len + 1
        triples = np.zeros((1, n, 3), dtype=int)
        with pytest.raises(SeqTooLong):
            tiny_model.forward(triples)


class TestCausality:
    def test_bitwise_causal_masking(self, rect_corpus):
        m = PrimitiveModel(seed=1)
        seq = tk.encode_primitives(rect_corpus[0])
        triples, real = pad_triples([seq])
        base = m.forward(triples, real).data
        for t in (3, 10, len(seq) - 2):
            mutated = triples.copy()
            mutated[0, t] = [tk.NUM_BASE + 11, 4, 1]
            out = m.forward(mutated, real).data
            assert np.array_equal(base[0, :t], out[0, :t])
            assert not np.array_equal(base[0, t:], out[0, t:])

    def test_len_one_sequence(self, tiny_model):
        triples = np.array([[[tk.START, 0, 0]]])
        out = tiny_model.forward(triples)
        assert out.data.shape == (1, 1, tiny_model.cfg.value_vocab)

    def test_softmax_of_logits_normalized(self, tiny_model, rect_corpus):
        seq = tk.encode_primitives(rect_corpus[0])
        triples, real = pad_triples([seq])
        logits = tiny_model.forward(triples, real).data
        p = np.exp(logits - logits.max(-1, keepdims=True))
        p /= p.sum(-1, keepdims=True)
        assert np.allclose(p.sum(-1), 1.0, atol=1e-6)

    def test_constraint_decoder_causal(self, rect_corpus):
        m = ConstraintModel(ModelConfig(layers=1, heads=2, embed_dim=32), seed=0)
        ex = constraint_example(rect_corpus[0])
        batch = constraint_batch([ex])
        logits, _ = m.forward(
            batch["prim_triples"], batch["prim_real"],
            batch["con_triples"], batch["con_real"],
            batch["designated"], batch["designated_real"],
        )
        base = logits.data
        mutated = batch["con_triples"].copy()
        t = 5
        mutated[0, t] = [tk.REF_BASE + 1, 2, 2]
        logits2, _ = m.forward(
            batch["prim_triples"], batch["prim_real"],
            mutated, batch["con_real"],
            batch["designated"], batch["designated_real"],
        )
        assert np.array_equal(base[0, :t], logits2.data[0, :t])


class TestPointer:
    def test_candidate_count(self, rect_corpus):
        s = rect_corpus[0]
        designated = tk.designated_indices(s)
        # lines only: 3 designated slots each
        assert len(designated) == 3 * len(s.primitives)
        state = np.zeros(16)
        types = np.eye(16)[:13, :]
        encs = np.zeros((len(designated), 16))
        logits = pointer_logits(state, types, encs)
        assert logits.shape == (13 + len(designated),)

    def test_orthonormal_argmax(self):
        rows = np.eye(8)
        state = rows[5]
        logits = pointer_logits(state, rows[:4], rows[4:])
        assert logits.argmax() == 5

    def test_zero_state_uniform(self):
        rng = np.random.default_rng(0)
        logits = pointer_logits(np.zeros(8), rng.normal(size=(13, 8)), rng.normal(size=(5, 8)))
        assert np.allclose(logits, 0.0)
        p = np.exp(logits) / np.exp(logits).sum()
        assert np.allclose(p, 1 / 18)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            pointer_logits(np.zeros(8), np.zeros((13, 9)), np.zeros((2, 9)))

    def test_candidate_growth_per_kind(self):
        from sketchforge.core import arc, circle, point

        growth = {"line": 3, "circle": 2, "arc": 4, "point": 1}
        prims = {
            "line": line(0, 0, 0.3, 0),
            "circle": circle(0, 0, 0.2),
            "arc": arc(0, 0, 0.1, 0.1, 0.2, 0),
            "point": point(0.1, 0.1),
        }
        base = Sketch((prims["line"],))
        for kind, extra in prims.items():
            grown = Sketch((prims["line"], extra))
            delta = len(tk.designated_indices(grown)) - len(tk.designated_indices(base))
            assert delta == growth[kind]


class TestNucleus:
    def test_dominant_token_only(self):
        logits = np.log(np.array([0.95, 0.03, 0.02]))
        for seed in range(20):
            assert nucleus_sample(logits, SamplerConfig(nucleus_p=0.9, seed=seed)) == 0

    def test_p1_matches_full_softmax(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=8)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        draws = np.zeros(8)
        g = np.random.default_rng(42)
        for _ in range(100_000):
            draws[nucleus_sample(logits, SamplerConfig(nucleus_p=1.0), rng=g)] += 1
        emp = draws / draws.sum()
        kl = float(np.sum(p * np.log(p / emp)))
        assert kl < 0.01

    def test_uniform_tie_break(self):
        logits = np.zeros(4)
        kept, probs = nucleus_support(logits, 0.5)
        assert list(kept) == [0, 1]
        assert np.allclose(probs, 0.5)

    def test_p_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(nucleus_p=0.0)
        with pytest.raises(ValueError):
            SamplerConfig(nucleus_p=1.1)


class TestTraining:
    def test_loss_decreases(self, rect_corpus):
        res = train("primitive", rect_corpus,
                    TrainConfig(epochs=4, batch_size=8, base_lr=3e-3, seed=0))
        losses = [l for _, l in res.loss_curve]
        assert losses[-1] < losses[0]

    def test_one_cycle_shape(self):
        total = 100
        lrs = [one_cycle_lr(t, total, 1e-3) for t in range(total)]
        peak = max(lrs)
        assert peak == pytest.approx(1e-2, rel=0.05)
        assert lrs[0] == pytest.approx(1e-3)
        assert lrs[-1] < lrs[30]

    def test_nonfinite_loss_detected(self, rect_corpus):
        m = PrimitiveModel(ModelConfig(layers=1, heads=1, embed_dim=8), seed=0)
        m.params["out.w"].data[:] = np.inf
        with pytest.raises(NonFiniteLoss):
            train("primitive", rect_corpus[:4],
                  TrainConfig(epochs=1, batch_size=2, seed=0), model=m)

    def test_adamw_decoupled_decay(self):
        p = parameter(np.ones(3) * 10.0)
        p.grad = np.zeros(3)
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
        opt.step()
        assert np.allclose(p.data, 10.0 * (1 - 0.1 * 0.5))

    def test_image_conditional_trains(self, rect_corpus):
        pairs = [
            (s, simulate_hand_drawing(s, NoiseConfig(seed=i)))
            for i, s in enumerate(rect_corpus[:6])
        ]
        res = train(
            "image_conditional", pairs,
            TrainConfig(epochs=3, batch_size=3, base_lr=3e-3, seed=0),
            ModelConfig(layers=1, heads=2, embed_dim=32),
        )
        losses = [l for _, l in res.loss_curve]
        assert losses[-1] < losses[0]

    def test_image_variants_with_affine_augment(self, rect_corpus):
        from sketchforge.handdraw import render_hand_variants

        pairs = [
            (s, render_hand_variants(s, NoiseConfig(seed=i), count=3))
            for i, s in enumerate(rect_corpus[:4])
        ]
        res = train(
            "image_conditional", pairs,
            TrainConfig(epochs=2, batch_size=2, base_lr=3e-3,
                        affine_augment=True, seed=0),
            ModelConfig(layers=1, heads=2, embed_dim=32),
        )
        assert len(res.loss_curve) == 2
        assert all(np.isfinite(l) for _, l in res.loss_curve)

    def test_shuffled_corpus_harder(self):
        corpus = prepare_corpus(generate_corpus("rectangles", 48, seed=5))
        seqs = [tk.encode_primitives(s) for s in corpus]
        rng = np.random.default_rng(0)

        def shuffle_prims(s):
            perm = rng.permutation(len(s.primitives))
            prims = tuple(s.primitives[int(i)] for i in perm)
            return Sketch(prims, ())

        shuffled = [tk.encode_primitives(shuffle_prims(s)) for s in corpus]
        cfg = TrainConfig(epochs=6, batch_size=16, base_lr=3e-3, seed=1)
        res_o = train("primitive", seqs, cfg)
        res_s = train("primitive", shuffled, cfg)
        assert res_s.loss_curve[-1][1] >= res_o.loss_curve[-1][1]


class TestGeneration:
    def test_untrained_deterministic(self):
        m = PrimitiveModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=4)
        a, sa = generate_primitives(m, SamplerConfig(seed=9))
        b, sb = generate_primitives(m, SamplerConfig(seed=9))
        assert a == b
        assert sa.steps == sb.steps

    def test_primer_is_fixed_prefix(self, rect_corpus):
        m = PrimitiveModel(seed=0)
        seq = tk.encode_primitives(rect_corpus[0])
        primer = seq[1:-1]
        tokens, _ = generate_primitives(m, SamplerConfig(seed=0), primer=primer)
        assert tokens[1 : 1 + len(primer)] == primer

    def test_near_complete_primer_stops(self, rect_corpus):
        corpus = rect_corpus
        res = train("primitive", corpus,
                    TrainConfig(epochs=15, batch_size=8, base_lr=6e-3, seed=0))
        # prime with a corpus-maximal sketch so Stop is the likeliest continuation
        full = max(corpus, key=lambda s: len(s.primitives))
        seq = tk.encode_primitives(full)
        primer = seq[1:-1]  # everything except Stop
        hits = 0
        for seed in range(5):
            tokens, stats = generate_primitives(res.model, SamplerConfig(seed=seed), primer=primer)
            if stats.stop_sampled and tokens[-1].value == tk.STOP:
                hits += 1
                decoded = tk.decode_primitives(tokens)  # completion stays valid
                assert len(decoded.primitives) >= len(full.primitives)
        assert hits >= 3

    def test_context_mismatch(self):
        m = PrimitiveModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=0)
        with pytest.raises(ContextMismatch):
            generate_primitives(m, SamplerConfig(seed=0), patches=np.zeros((64, 256)))
        mi = ImagePrimitiveModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=0)
        with pytest.raises(ContextMismatch):
            generate_primitives(mi, SamplerConfig(seed=0))

    def test_image_conditional_generation_runs(self, rect_corpus):
        mi = ImagePrimitiveModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=0)
        img = simulate_hand_drawing(rect_corpus[0], NoiseConfig(seed=0))
        tokens, stats = generate_primitives(
            mi, SamplerConfig(seed=0), patches=patchify(img)
        )
        assert stats.steps > 0

    def test_constraint_generation_decodes_on_trained_model(self, rect_corpus):
        res = train("constraint", rect_corpus,
                    TrainConfig(epochs=12, batch_size=8, base_lr=3e-3, noise_sigma=0.01, seed=0))
        target = rect_corpus[0]
        prims_only = Sketch(target.primitives, ())
        decoded = None
        for seed in range(6):  # retry over seeds, as the service endpoint does
            tokens, stats = generate_constraints(
                res.model, prims_only, SamplerConfig(nucleus_p=0.7, seed=seed)
            )
            if stats.malformed:
                continue
            try:
                decoded = tk.decode_constraints(tokens, prims_only)
                break
            except (tk.MalformedSequence, tk.InvalidReference):
                continue
        assert decoded is not None
        assert len(decoded) >= 6
        assert "coincident" in {c.kind.value for c in decoded}


class TestCheckpoint:
    def test_round_trip_all_kinds(self, tmp_path, rect_corpus):
        seq = tk.encode_primitives(rect_corpus[0])
        triples, real = pad_triples([seq])
        models = [
            PrimitiveModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=0),
            ConstraintModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=0),
            ImagePrimitiveModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=0),
        ]
        for m in models:
            path = tmp_path / f"{m.kind}.npz"
            save_checkpoint(m, path)
            loaded = load_checkpoint(path)
            assert loaded.kind == m.kind
            for k, v in m.state_arrays().items():
                assert np.array_equal(loaded.state_arrays()[k], v)

    def test_rejects_non_checkpoint(self, tmp_path):
        p = tmp_path / "junk.npz"
        np.savez(p, a=np.zeros(3))
        with pytest.raises(ValueError):
            load_checkpoint(p)
