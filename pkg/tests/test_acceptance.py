"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line.  Run with `pytest tests/test_acceptance.py -v -s`.
"""

import math
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from sketchforge import tokenizer as tk
from sketchforge.core import (
    Constraint,
    ConstraintKind,
    Primitive,
    PrimitiveKind,
    Reference,
    Sketch,
    Slot,
    arc,
    circle,
    degrees_of_freedom,
    line,
    normalize_sketch,
    point,
    sketch_to_json,
    sort_constraints,
)
from sketchforge.handdraw import NoiseConfig, matern32_kernel, matern32_path
from sketchforge.pipeline import (
    distributional_stats,
    evaluate_nll,
    generate_corpus,
    make_rectangle,
    prepare_corpus,
    uniform_baseline,
    compression_baseline,
)
from sketchforge.seqmodel import (
    ModelConfig,
    PrimitiveModel,
    SamplerConfig,
    TrainConfig,
    generate_primitives,
    pad_triples,
    train,
)
from sketchforge.seqmodel.data import constraint_batch, constraint_example
from sketchforge.service import ServiceConfig, create_app
from sketchforge.solver import build_residual_blocks, solve
from conftest import random_sketch


def report(name: str, ok: bool, detail: str = ""):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}  [{detail}]")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. Tokenizer round-trip
# ---------------------------------------------------------------------------

def test_tokenizer_round_trip():
    rng = np.random.default_rng(0)
    t0 = time.time()
    half_bin = 1 / 128 + 1e-12
    for _ in range(1000):
        s = random_sketch(rng, max_primitives=8, with_constraints=True)
        dec = tk.decode_primitives(tk.encode_primitives(s))
        assert len(dec.primitives) == len(s.primitives)
        for a, b in zip(s.primitives, dec.primitives):
            assert a.kind == b.kind and a.is_construction == b.is_construction
            assert max(abs(x - y) for x, y in zip(a.params, b.params)) <= half_bin
        cons = tk.decode_constraints(tk.encode_constraints(s), s)
        assert cons == s.constraints
    elapsed = time.time() - t0
    report(
        "tokenizer-round-trip",
        elapsed < 10.0,
        f"1000 sketches, both streams, {elapsed:.1f}s < 10s",
    )


# ---------------------------------------------------------------------------
# 2. Solver correctness
# ---------------------------------------------------------------------------

def _rand_line(rng):
    while True:
        p = rng.uniform(-0.5, 0.5, 4)
        if math.hypot(p[2] - p[0], p[3] - p[1]) > 0.1:
            return line(*p)


def _rand_circle(rng):
    return circle(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.05, 0.4))


def _rand_arc(rng):
    while True:
        p = rng.uniform(-0.5, 0.5, 6)
        area2 = (p[2] - p[0]) * (p[5] - p[1]) - (p[3] - p[1]) * (p[4] - p[0])
        if abs(area2) > 0.02:
            return arc(*p)


def _rand_point(rng):
    return point(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))


def _jacobian_configs(rng):
    """Cycle of (primitives, constraint) configs covering every residual."""
    L, C, A, P = _rand_line, _rand_circle, _rand_arc, _rand_point
    r = Reference
    cases = [
        lambda: ((P(rng), P(rng)), Constraint(ConstraintKind.COINCIDENT, (r(0), r(1)))),
        lambda: ((L(rng), L(rng)), Constraint(
            ConstraintKind.COINCIDENT, (r(0, Slot.SECOND), r(1, Slot.FIRST)))),
        lambda: ((P(rng), L(rng)), Constraint(ConstraintKind.COINCIDENT, (r(0), r(1)))),
        lambda: ((P(rng), C(rng)), Constraint(ConstraintKind.COINCIDENT, (r(0), r(1)))),
        lambda: ((P(rng), A(rng)), Constraint(ConstraintKind.COINCIDENT, (r(0), r(1)))),
        lambda: ((A(rng), C(rng)), Constraint(
            ConstraintKind.COINCIDENT, (r(0, Slot.CENTER), r(1, Slot.CENTER)))),
        lambda: ((C(rng), C(rng)), Constraint(ConstraintKind.CONCENTRIC, (r(0), r(1)))),
        lambda: ((A(rng), C(rng)), Constraint(ConstraintKind.CONCENTRIC, (r(0), r(1)))),
        lambda: ((A(rng), A(rng)), Constraint(ConstraintKind.CONCENTRIC, (r(0), r(1)))),
        lambda: ((L(rng), L(rng)), Constraint(ConstraintKind.EQUAL, (r(0), r(1)))),
        lambda: ((C(rng), C(rng)), Constraint(ConstraintKind.EQUAL, (r(0), r(1)))),
        lambda: ((A(rng), C(rng)), Constraint(ConstraintKind.EQUAL, (r(0), r(1)))),
        lambda: ((A(rng), A(rng)), Constraint(ConstraintKind.EQUAL, (r(0), r(1)))),
        lambda: ((L(rng),), Constraint(ConstraintKind.FIX, (r(0),))),
        lambda: ((A(rng),), Constraint(ConstraintKind.FIX, (r(0),))),
        lambda: ((A(rng),), Constraint(ConstraintKind.FIX, (r(0, Slot.CENTER),))),
        lambda: ((L(rng),), Constraint(ConstraintKind.HORIZONTAL, (r(0),))),
        lambda: ((P(rng), P(rng)), Constraint(ConstraintKind.HORIZONTAL, (r(0), r(1)))),
        lambda: ((L(rng),), Constraint(ConstraintKind.VERTICAL, (r(0),))),
        lambda: ((P(rng), A(rng)), Constraint(
            ConstraintKind.VERTICAL, (r(0), r(1, Slot.CENTER)))),
        lambda: ((P(rng), L(rng)), Constraint(ConstraintKind.MIDPOINT, (r(0), r(1)))),
        lambda: ((L(rng), C(rng)), Constraint(ConstraintKind.NORMAL, (r(0), r(1)))),
        lambda: ((L(rng), A(rng)), Constraint(ConstraintKind.NORMAL, (r(0), r(1)))),
        lambda: ((L(rng), L(rng)), Constraint(ConstraintKind.PARALLEL, (r(0), r(1)))),
        lambda: ((L(rng), L(rng)), Constraint(ConstraintKind.PERPENDICULAR, (r(0), r(1)))),
        lambda: ((P(rng), C(rng)), Constraint(ConstraintKind.QUADRANT, (r(0), r(1)))),
        lambda: ((P(rng), A(rng)), Constraint(ConstraintKind.QUADRANT, (r(0), r(1)))),
        lambda: ((L(rng), C(rng)), Constraint(ConstraintKind.TANGENT, (r(0), r(1)))),
        lambda: ((L(rng), A(rng)), Constraint(ConstraintKind.TANGENT, (r(0), r(1)))),
        lambda: ((C(rng), C(rng)), Constraint(ConstraintKind.TANGENT, (r(0), r(1)))),
        lambda: ((C(rng), A(rng)), Constraint(ConstraintKind.TANGENT, (r(0), r(1)))),
    ]
    i = 0
    while True:
        yield cases[i % len(cases)]()
        i += 1


def test_solver_correctness():
    t0 = time.time()
    rng = np.random.default_rng(1)
    gen = _jacobian_configs(rng)
    worst = 0.0
    for _ in range(1000):
        prims, con = next(gen)
        s = Sketch(prims, (con,))
        block = build_residual_blocks(s)[0]
        x = np.array([v for p in s.primitives for v in p.params])
        local = x[block.var_indices]
        J = block.jacobian(local)
        h = 1e-6
        for j in range(len(block.var_indices)):
            lp, lm = local.copy(), local.copy()
            lp[j] += h
            lm[j] -= h
            fd = (np.asarray(block.fn(lp), float) - np.asarray(block.fn(lm), float)) / (2 * h)
            err = np.max(np.abs(J[:, j] - fd) / np.maximum(np.abs(fd), 1.0))
            worst = max(worst, float(err))
    assert worst < 1e-4

    # perturb constrained sketches, solve, count how many reach tolerance
    corpus = prepare_corpus(generate_corpus("mixed", 200, seed=2))
    prng = np.random.default_rng(3)
    ok = 0
    for s in corpus:
        prims = []
        for p in s.primitives:
            params = np.asarray(p.params) + prng.normal(0, 0.01, len(p.params))
            if p.kind is PrimitiveKind.CIRCLE:
                params[2] = max(params[2], 1e-3)
            try:
                prims.append(Primitive(p.kind, tuple(params), p.is_construction))
            except ValueError:
                prims.append(p)
        solved, rep = solve(Sketch(tuple(prims), s.constraints))
        if rep.converged and rep.max_constraint_violation < 1e-6:
            ok += 1
    frac = ok / len(corpus)
    elapsed = time.time() - t0
    report(
        "solver-correctness",
        worst < 1e-4 and frac >= 0.95 and elapsed < 60.0,
        f"jacobian rel err {worst:.2e} < 1e-4; solve rate {frac:.1%} >= 95%; "
        f"{elapsed:.1f}s < 60s",
    )


# ---------------------------------------------------------------------------
# 3. DOF oracle
# ---------------------------------------------------------------------------

def test_dof_oracle():
    fixture = make_rectangle(np.random.default_rng(7))
    d = degrees_of_freedom(fixture)
    rects = generate_corpus("rectangle", 60, seed=5)
    rep = distributional_stats(rects, rects, n_boot=100)
    m = rep.metrics["dof_net"]
    point_mass = list(m["bins"]) == [4] and m["sample_freq"][0] == 1.0
    report(
        "dof-oracle",
        (d.total, d.removed, d.net) == (16, 12, 4) and point_mass,
        f"rectangle -> ({d.total}, {d.removed}, {d.net}); stats point mass at 4: {point_mass}",
    )


# ---------------------------------------------------------------------------
# 4. GP noise model
# ---------------------------------------------------------------------------

def test_gp_noise_model():
    cfg = NoiseConfig(seed=0)
    n, length = 41, 100.0
    ell = cfg.matern_lengthscale_frac * length
    rng = np.random.default_rng(0)
    draws = matern32_path(n, length, cfg, rng=rng, bridge=False, size=10_000)
    dt = length / (n - 1)
    lag = int(round(ell / dt))
    worst = 0.0
    for k, r in ((0, 0.0), (lag, ell), (2 * lag, 2 * ell)):
        pairs = [draws[i] * draws[i + k] for i in range(n - k)]
        emp = float(np.mean(pairs))
        theory = matern32_kernel(r, cfg.amplitude_px, ell)
        worst = max(worst, abs(emp - theory) / theory)
    bridged = matern32_path(n, length, cfg)
    pinned = bridged[0] == 0.0 and bridged[-1] == 0.0
    report(
        "gp-noise-model",
        worst < 0.05 and pinned,
        f"cov rel err {worst:.3f} < 0.05 at r in {{0, l, 2l}}; bridge endpoints zero: {pinned}",
    )


# ---------------------------------------------------------------------------
# 5. Model mechanics
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def rect_bundle():
    t0 = time.time()
    corpus = prepare_corpus(generate_corpus("rectangles", 300, seed=11))
    train_set, test_set = corpus[:256], corpus[256:]
    result = train(
        "primitive", train_set,
        TrainConfig(epochs=25, batch_size=32, base_lr=6e-3, seed=0),
    )
    seqs = [tk.encode_primitives(s) for s in test_set]
    return {
        "model": result.model,
        "seqs": seqs,
        "train_set": train_set,
        "elapsed": time.time() - t0,
    }


def test_model_mechanics(rect_bundle):
    t0 = time.time()

    # causal masking, bit for bit
    m = PrimitiveModel(seed=1)
    seq = rect_bundle["seqs"][0]
    triples, real = pad_triples([seq])
    base = m.forward(triples, real).data
    mutated = triples.copy()
    mutated[0, 12] = [tk.NUM_BASE + 3, 4, 2]
    out = m.forward(mutated, real).data
    causal = np.array_equal(base[0, :12], out[0, :12])

    # finite-difference gradcheck on the tiny config
    tiny = PrimitiveModel(ModelConfig(layers=1, heads=2, embed_dim=16), seed=0)
    tt, rr = pad_triples(rect_bundle["seqs"][:2])
    loss = tiny.loss(tt, rr)
    tiny.zero_grad()
    loss.backward()
    rng = np.random.default_rng(5)
    names = list(tiny.params)
    worst_grad = 0.0
    for _ in range(50):
        nm = names[rng.integers(len(names))]
        p = tiny.params[nm]
        ix = tuple(rng.integers(s) for s in p.data.shape)
        analytic = p.grad[ix] if p.grad is not None else 0.0
        h = 1e-4
        old = p.data[ix]
        p.data[ix] = old + h
        lp = float(tiny.loss(tt, rr).data)
        p.data[ix] = old - h
        lm = float(tiny.loss(tt, rr).data)
        p.data[ix] = old
        fd = (lp - lm) / (2 * h)
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
        worst_grad = max(worst_grad, rel)

    # memorization: single repeated sketch below 1 bit/sketch
    single = rect_bundle["train_set"][:1]
    mem = train("primitive", single,
                TrainConfig(epochs=300, batch_size=1, base_lr=2e-2,
                            weight_decay=0.0, seed=0))
    mem_bits = evaluate_nll(mem.model, [tk.encode_primitives(single[0])]).bits_per_sketch

    # rectangle corpus: trained NLL beats uniform by >= 2x in bits/primitive
    rep = evaluate_nll(rect_bundle["model"], rect_bundle["seqs"])
    uni = uniform_baseline(rect_bundle["seqs"])
    ratio = uni.bits_per_primitive / rep.bits_per_primitive

    # period-4 pattern in per-position NLL
    curve = rep.per_position_nll
    period4 = len(curve) >= 12 and all(
        curve[4 * k] > curve[4 * k + j] for k in range(3) for j in (1, 2, 3)
    )

    elapsed = time.time() - t0 + rect_bundle["elapsed"]
    report(
        "model-mechanics",
        causal and worst_grad < 1e-3 and mem_bits < 1.0 and ratio >= 2.0
        and period4 and elapsed < 900,
        f"causal bit-for-bit: {causal}; gradcheck {worst_grad:.2e} < 1e-3; "
        f"memorization {mem_bits:.2f} bits < 1; NLL ratio {ratio:.1f}x >= 2x; "
        f"period-4: {period4}; {elapsed:.0f}s < 900s",
    )


def test_unconditional_samples_decode(rect_bundle):
    ok = 0
    for seed in range(100):
        tokens, stats = generate_primitives(
            rect_bundle["model"], SamplerConfig(nucleus_p=0.9, seed=seed)
        )
        if stats.malformed:
            continue
        try:
            tk.decode_primitives(tokens)
            ok += 1
        except tk.MalformedSequence:
            pass
    report(
        "samples-decode",
        ok >= 90,
        f"{ok}/100 unconditional samples decode to valid sketches (>= 90)",
    )


# ---------------------------------------------------------------------------
# 6. Directional noise-injection analog
# ---------------------------------------------------------------------------

def _constraint_accuracy(model, sketches, sigma, seed):
    rng = np.random.default_rng(seed)
    examples = [constraint_example(s, noise_sigma=sigma, rng=rng) for s in sketches]
    batch = constraint_batch(examples)
    logits, _ = model.forward(
        batch["prim_triples"], batch["prim_real"],
        batch["con_triples"][:, :-1], batch["con_real"][:, :-1],
        batch["designated"], batch["designated_real"],
    )
    pred = logits.data.argmax(axis=-1)
    m = batch["target_mask"]
    return float((pred[m] == batch["targets"][m]).mean())


def test_noise_injection_analog():
    corpus = prepare_corpus(generate_corpus("coincidence_web", 240, seed=21))
    train_set, test_set = corpus[:200], corpus[200:]
    cfg = dict(epochs=10, batch_size=32, base_lr=3e-3, seed=0)
    noisy = train("constraint", train_set, TrainConfig(noise_sigma=0.01, **cfg))
    clean = train("constraint", train_set, TrainConfig(noise_sigma=0.0, **cfg))
    acc_noisy = _constraint_accuracy(noisy.model, test_set, 0.01, seed=7)
    acc_clean = _constraint_accuracy(clean.model, test_set, 0.01, seed=7)
    margin = (acc_noisy - acc_clean) * 100
    report(
        "noise-injection-analog",
        acc_noisy >= acc_clean,
        f"noisy-trained {acc_noisy:.3f} >= noiseless-trained {acc_clean:.3f} "
        f"on noisy inputs; margin {margin:+.1f} points "
        f"({'>= 1 point' if margin >= 1.0 else '< 1 point'})",
    )


# ---------------------------------------------------------------------------
# 7. Baselines
# ---------------------------------------------------------------------------

def test_baselines():
    corpus = prepare_corpus(generate_corpus("rectangles", 40, seed=9))
    seqs = [tk.encode_primitives(s) for s in corpus]
    um = PrimitiveModel(ModelConfig(), seed=0).make_uniform()
    a = evaluate_nll(um, seqs)
    b = uniform_baseline(seqs)
    exact = (
        a.bits_per_sketch == b.bits_per_sketch
        and a.bits_per_primitive == b.bits_per_primitive
        and a.per_position_nll == b.per_position_nll
    )

    rng = np.random.default_rng(0)
    rand_seqs = []
    for _ in range(300):
        n = int(rng.integers(40, 100))
        rand_seqs.append([tk.TokenTriple(int(v), 0, 1) for v in rng.integers(0, 73, n)])
    _, bps = compression_baseline(rand_seqs)
    uni = uniform_baseline(rand_seqs)
    gap = abs(bps - uni.bits_per_sketch) / uni.bits_per_sketch
    report(
        "baselines",
        exact and gap < 0.10,
        f"uniform model == uniform baseline exactly: {exact}; "
        f"LZMA on random tokens within {gap:.1%} of uniform (< 10%)",
    )


# ---------------------------------------------------------------------------
# 8. Service
# ---------------------------------------------------------------------------

def test_service_contracts():
    client = TestClient(create_app(ServiceConfig()), raise_server_exceptions=False)
    rect = sketch_to_json(make_rectangle(np.random.default_rng(0)))

    t = client.post("/tokenize", json={"sketch": rect, "stream": "primitives"})
    tokens = t.json()["result"]["tokens"]
    d = client.post("/detokenize", json={"tokens": tokens, "stream": "primitives"})
    prims = d.json()["result"]["sketch"]["primitives"]
    round_trip = [p["kind"] for p in prims] == [p["kind"] for p in rect["primitives"]]
    tc = client.post("/tokenize", json={"sketch": rect, "stream": "constraints"})
    dc = client.post("/detokenize", json={
        "tokens": tc.json()["result"]["tokens"], "stream": "constraints", "sketch": rect,
    })
    round_trip = round_trip and (
        dc.json()["result"]["sketch"]["constraints"] == rect["constraints"]
    )

    a = client.post("/solve", json={"sketch": rect, "seed": 1}).json()
    b = client.post("/solve", json={"sketch": rect, "seed": 1}).json()
    deterministic = a == b

    bad = Sketch(
        (line(0, 0, 0.7, 0.5),),
        sort_constraints([
            Constraint(ConstraintKind.HORIZONTAL, (Reference(0),)),
            Constraint(ConstraintKind.VERTICAL, (Reference(0),)),
        ]),
    )
    r = client.post("/solve", json={"sketch": sketch_to_json(bad)})
    contract_409 = (
        r.status_code == 409
        and r.json()["ok"] is False
        and "sketch" in r.json().get("result", {})
    )
    report(
        "service-contracts",
        round_trip and deterministic and contract_409,
        f"tokenize/detokenize identity: {round_trip}; solve deterministic: "
        f"{deterministic}; 409 with best-effort sketch: {contract_409}",
    )
