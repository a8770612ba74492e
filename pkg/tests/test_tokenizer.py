import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchforge import tokenizer as tk
from sketchforge.core import (
    PARAM_COUNT,
    Constraint,
    ConstraintKind,
    PrimitiveKind,
    Reference,
    Sketch,
    Slot,
    line,
    point,
    normalize_sketch,
)
from conftest import random_sketch


def norm(s):
    return normalize_sketch(s)[0]


class TestPrimitiveEncoding:
    def test_empty_sketch(self):
        toks = tk.encode_primitives(Sketch((), ()))
        assert [(t.value, t.id, t.position) for t in toks] == [(1, 0, 0), (2, 0, 0)]
        assert tk.decode_primitives(toks).primitives == ()

    def test_single_point_layout(self):
        s = Sketch((point(0.0, 0.0),))
        toks = tk.encode_primitives(s)
        got = [(t.value, t.id, t.position) for t in toks]
        assert got == [
            (tk.START, 0, 0),
            (6, tk.ID_TYPE, 1),          # Point type code
            (tk.BOOL_FALSE, 2, 1),
            (tk.NUM_BASE + 32, 9, 1),    # x = 0 -> bin 32
            (tk.NUM_BASE + 32, 10, 1),   # y = 0 -> bin 32
            (tk.STOP, 0, 0),
        ]

    def test_line_point_line_positions(self):
        s = Sketch((line(-0.4, 0, 0.4, 0), point(0, 0.1), line(-0.4, 0.2, 0.4, 0.2)))
        toks = tk.encode_primitives(s)
        positions = [t.position for t in toks]
        assert positions == [0] + [1] * 6 + [2] * 4 + [3] * 6 + [0]

    def test_flattened_length(self, rng):
        for _ in range(50):
            s = random_sketch(rng, with_constraints=False)
            toks = tk.encode_primitives(s)
            expected = 2 + sum(2 + PARAM_COUNT[p.kind] for p in s.primitives)
            assert len(toks) == expected == tk.flattened_length(s)

    def test_too_long(self):
        prims = tuple(point(0.01 * i, 0) for i in range(40))
        with pytest.raises(tk.TooLong):
            tk.encode_primitives(Sketch(prims))

    def test_type_token_where_coordinate_expected(self):
        s = Sketch((point(0.0, 0.0),))
        toks = tk.encode_primitives(s)
        bad = list(toks)
        bad[3] = tk.TokenTriple(tk.PRIMITIVE_TYPE_CODES[PrimitiveKind.LINE], 9, 1)
        with pytest.raises(tk.MalformedSequence) as ei:
            tk.decode_primitives(bad)
        assert ei.value.index == 3

    def test_position_monotone_required(self):
        s = Sketch((point(0.0, 0.0), point(0.1, 0.1)))
        toks = tk.encode_primitives(s)
        bad = [
            tk.TokenTriple(t.value, t.id, 1 if t.position == 2 else t.position)
            for t in toks
        ]
        with pytest.raises(tk.MalformedSequence):
            tk.decode_primitives(bad)

    def test_truncation_detected(self):
        s = Sketch((line(0, 0, 0.3, 0.3),))
        toks = tk.encode_primitives(s)
        with pytest.raises(tk.MalformedSequence):
            tk.decode_primitives(toks[:-2])  # drop last param + Stop

    def test_round_trip_many(self, rng):
        for _ in range(200):
            s = random_sketch(rng, with_constraints=False)
            dec = tk.decode_primitives(tk.encode_primitives(s))
            assert len(dec.primitives) == len(s.primitives)
            for a, b in zip(s.primitives, dec.primitives):
                assert a.kind == b.kind
                assert a.is_construction == b.is_construction
                assert np.max(np.abs(np.array(a.params) - np.array(b.params))) <= 1 / 128 + 1e-12


class TestConstraintEncoding:
    def test_empty(self):
        s = Sketch((line(0, 0, 1, 1),), ())
        toks = tk.encode_constraints(s)
        assert [(t.value, t.id, t.position) for t in toks] == [(1, 0, 0), (2, 0, 0)]
        assert tk.decode_constraints(toks, s) == ()

    def test_two_line_coincident_indices(self):
        s = Sketch(
            (line(0, 0, 0.3, 0), line(0.3, 0, 0.3, 0.3)),
            (Constraint(ConstraintKind.COINCIDENT,
                        (Reference(0, Slot.SECOND), Reference(1, Slot.FIRST))),),
        )
        toks = tk.encode_constraints(s)
        got = [(t.value, t.id, t.position) for t in toks]
        # line0 type token at flat index 1; second endpoint at +4 -> 5
        # line1 type token at flat index 7; first endpoint at +2 -> 9
        assert got == [
            (tk.START, 0, 0),
            (3, tk.ID_TYPE, 1),
            (tk.REF_BASE + 5, 2, 1),
            (tk.REF_BASE + 9, 3, 1),
            (tk.STOP, 0, 0),
        ]

    def test_single_ref_horizontal(self):
        s = Sketch(
            (line(0, 0, 0.3, 0.1),),
            (Constraint(ConstraintKind.HORIZONTAL, (Reference(0),)),),
        )
        toks = tk.encode_constraints(s)
        got = [(t.value, t.id, t.position) for t in toks]
        assert got == [
            (tk.START, 0, 0),
            (7, tk.ID_TYPE, 1),
            (tk.REF_BASE + 1, 2, 1),
            (tk.STOP, 0, 0),
        ]

    def test_pointer_to_construction_flag_rejected(self):
        s = Sketch((line(0, 0, 0.3, 0.1),),
                   (Constraint(ConstraintKind.HORIZONTAL, (Reference(0),)),))
        toks = tk.encode_constraints(s)
        bad = list(toks)
        bad[2] = tk.TokenTriple(tk.REF_BASE + 2, 2, 1)  # flat index 2 = flag token
        with pytest.raises(tk.InvalidReference):
            tk.decode_constraints(bad, s)

    def test_round_trip_many(self, rng):
        for _ in range(200):
            s = random_sketch(rng, with_constraints=True)
            dec = tk.decode_constraints(tk.encode_constraints(s), s)
            assert dec == s.constraints

    def test_resolution_map_bijective(self, rng):
        for _ in range(50):
            s = random_sketch(rng, with_constraints=False)
            rmap = tk.resolution_map(s)
            refs = list(rmap.values())
            assert len(set(refs)) == len(refs)
            expected = {
                PrimitiveKind.ARC: 4, PrimitiveKind.CIRCLE: 2,
                PrimitiveKind.LINE: 3, PrimitiveKind.POINT: 1,
            }
            assert len(rmap) == sum(expected[p.kind] for p in s.primitives)
            starts = tk.primitive_token_starts(s)
            for k, ref in rmap.items():
                assert k == starts[ref.primitive] + tk.SLOT_OFFSETS[
                    s.primitives[ref.primitive].kind][ref.slot]


class TestGrammarProperties:
    def test_run_structure(self, rng):
        for _ in range(30):
            s = random_sketch(rng, with_constraints=False)
            toks = tk.encode_primitives(s)
            prev_pos = None
            for t in toks:
                if t.position == 0:
                    assert t.value in (tk.START, tk.STOP)
                    assert t.id == tk.ID_MARKER
                elif t.position != prev_pos:
                    assert t.value in tk.PRIMITIVE_TYPE_CODES.values()
                prev_pos = t.position

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_fuzzed_primitive_decode_never_crashes(self, data):
        n = data.draw(st.integers(1, 40))
        toks = [
            tk.TokenTriple(
                data.draw(st.integers(0, tk.PRIMITIVE_VOCAB_SIZE - 1)),
                data.draw(st.integers(0, tk.PRIMITIVE_ID_SIZE - 1)),
                data.draw(st.integers(0, 17)),
            )
            for _ in range(n)
        ]
        try:
            tk.decode_primitives(toks)
        except tk.MalformedSequence:
            pass

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_fuzzed_constraint_decode_never_crashes(self, data):
        base = Sketch((line(0, 0, 0.3, 0), line(0.3, 0, 0.3, 0.3)))
        n = data.draw(st.integers(1, 20))
        toks = [
            tk.TokenTriple(
                data.draw(st.integers(0, tk.REF_BASE + 20)),
                data.draw(st.integers(0, tk.CONSTRAINT_ID_SIZE - 1)),
                data.draw(st.integers(0, 8)),
            )
            for _ in range(n)
        ]
        try:
            tk.decode_constraints(toks, base)
        except (tk.MalformedSequence, tk.InvalidReference):
            pass

    def test_mutated_round_trip_tokens_fail_loudly(self, rng):
        s = norm(random_sketch(rng, with_constraints=False))
        toks = tk.encode_primitives(s)
        for _ in range(50):
            i = int(rng.integers(len(toks)))
            t = toks[i]
            mutated = list(toks)
            mutated[i] = tk.TokenTriple(
                int(rng.integers(tk.PRIMITIVE_VOCAB_SIZE)), t.id, t.position
            )
            try:
                tk.decode_primitives(mutated)
            except tk.MalformedSequence:
                pass


class TestDumpFormat:
    def test_round_trip(self, rng):
        s = random_sketch(rng)
        toks = tk.encode_primitives(s)
        text = tk.dump_tokens(toks, "primitives")
        assert text.startswith("# sketchforge-tokens v1 stream=primitives")
        back = tk.parse_tokens(text)
        assert back == toks

    def test_bad_line(self):
        with pytest.raises(ValueError):
            tk.parse_tokens("1 2\n")

    def test_unknown_stream(self):
        with pytest.raises(ValueError):
            tk.dump_tokens([], "waveforms")
