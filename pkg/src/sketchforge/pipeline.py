"""Dataset ingestion, metrics, baselines, and distributional statistics.

Also bundles a synthetic-corpus generator (rectangle compositions, slotted
plates, bolt circles) so training and evaluation have data at desk scale.
"""

from __future__ import annotations

import hashlib
import json
import lzma
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tokenizer as tk
from .core import (
    Constraint,
    ConstraintKind,
    DegenerateExtent,
    Reference,
    Sketch,
    SketchError,
    Slot,
    arc,
    circle,
    dedup_key,
    degrees_of_freedom,
    line,
    normalize_sketch,
    point,
    sketch_from_json,
    sketch_to_json,
    sort_constraints,
)
from .seqmodel.autodiff import token_nll_nats
from .seqmodel.models import pad_triples

__all__ = [
    "FilterConfig",
    "DatasetManifest",
    "EvalReport",
    "StatsReport",
    "ingest_and_filter",
    "load_manifest",
    "evaluate_nll",
    "uniform_baseline",
    "compression_baseline",
    "distributional_stats",
    "generate_corpus",
    "write_corpus",
    "rectangle_constraints",
    "make_rectangle",
    "make_rectangles_sketch",
    "make_slotted_plate",
    "make_bolt_circle",
    "make_slot_plate",
    "prepare_corpus",
]

SPLIT_FRACTIONS = {"train": 0.925, "val": 0.025, "test": 0.05}


@dataclass(frozen=True)
class FilterConfig:
    min_primitives: int = 6
    max_primitives: int = 16
    require_constraints: bool = True


@dataclass
class DatasetManifest:
    seed: int
    filter: FilterConfig
    splits: dict[str, list[str]]
    files: dict[str, str]
    dropped: dict[str, str] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "version": 1,
            "seed": self.seed,
            "filter": asdict(self.filter),
            "splits": self.splits,
            "files": self.files,
            "dropped": self.dropped,
            "errors": self.errors,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    def split_sketches(self, split: str) -> list[Sketch]:
        out = []
        for sid in self.splits[split]:
            data = json.loads(Path(self.files[sid]).read_text())
            out.append(sketch_from_json(data))
        return out


def load_manifest(path) -> DatasetManifest:
    d = json.loads(Path(path).read_text())
    return DatasetManifest(
        seed=d["seed"],
        filter=FilterConfig(**d["filter"]),
        splits=d["splits"],
        files=d["files"],
        dropped=d.get("dropped", {}),
        errors=d.get("errors", {}),
    )


def _split_order_key(seed: int, sid: str) -> str:
    return hashlib.sha256(f"{seed}:{sid}".encode()).hexdigest()


def ingest_and_filter(
    directory,
    seed: int = 0,
    filter_cfg: FilterConfig = FilterConfig(),
) -> DatasetManifest:
    """Scan a directory of sketch JSON files; filter, dedup, split.

    Per-file parse errors are collected, not fatal.  Duplicates (same
    normalized-quantized primitive sequence) keep the first occurrence in
    path order.  Split assignment orders ids by a seeded hash, so it is a
    pure function of (id, seed) population-wide and stable across runs.
    """
    directory = Path(directory)
    errors: dict[str, str] = {}
    dropped: dict[str, str] = {}
    kept: list[str] = []
    files: dict[str, str] = {}
    seen_keys: set[str] = set()

    for path in sorted(directory.glob("*.json")):
        sid = path.stem
        try:
            data = json.loads(path.read_text())
            s = sketch_from_json(data)
        except (json.JSONDecodeError, SketchError, OSError) as e:
            errors[str(path)] = str(e)
            continue
        n = len(s.primitives)
        if n < filter_cfg.min_primitives:
            dropped[sid] = f"too few primitives ({n})"
            continue
        if n > filter_cfg.max_primitives:
            dropped[sid] = f"too many primitives ({n})"
            continue
        if filter_cfg.require_constraints and not s.constraints:
            dropped[sid] = "no constraints"
            continue
        try:
            key = dedup_key(s)
        except DegenerateExtent as e:
            dropped[sid] = f"degenerate extent: {e}"
            continue
        if key in seen_keys:
            dropped[sid] = "duplicate"
            continue
        seen_keys.add(key)
        kept.append(sid)
        files[sid] = str(path)

    ordered = sorted(kept, key=lambda sid: _split_order_key(seed, sid))
    n = len(ordered)
    n_train = round(n * SPLIT_FRACTIONS["train"])
    n_val = round(n * SPLIT_FRACTIONS["val"])
    splits = {
        "train": sorted(ordered[:n_train]),
        "val": sorted(ordered[n_train : n_train + n_val]),
        "test": sorted(ordered[n_train + n_val :]),
    }
    return DatasetManifest(
        seed=seed, filter=filter_cfg, splits=splits, files=files,
        dropped=dropped, errors=errors,
    )


# ---------------------------------------------------------------------------
# Evaluation metrics
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    bits_per_primitive: float
    bits_per_sketch: float
    token_accuracy: float
    per_position_nll: list[float]
    sketch_count: int
    token_count: int

    def to_csv(self) -> str:
        lines = [
            "bits_per_primitive,bits_per_sketch,token_accuracy,sketch_count,token_count",
            f"{self.bits_per_primitive!r},{self.bits_per_sketch!r},"
            f"{self.token_accuracy!r},{self.sketch_count},{self.token_count}",
            "",
            "position,nll_bits",
        ]
        for i, v in enumerate(self.per_position_nll, start=1):
            lines.append(f"{i},{v!r}")
        return "\n".join(lines) + "\n"


def _evaluate_stream(logits_fn, seqs: list[list[tk.TokenTriple]], batch: int = 64) -> EvalReport:
    ln2 = math.log(2.0)
    total_bits = 0.0
    total_tokens = 0
    correct = 0
    per_pos_sums: dict[int, float] = {}
    per_pos_counts: dict[int, int] = {}
    prim_counts = []
    sketch_bits = []

    for i in range(0, len(seqs), batch):
        chunk = seqs[i : i + batch]
        triples, real = pad_triples(chunk)
        logits = logits_fn(triples[:, :-1], real[:, :-1])
        targets = triples[:, 1:, 0]
        mask = real[:, 1:]
        nll = token_nll_nats(logits, targets)
        pred = logits.argmax(axis=-1)
        for b, seq in enumerate(chunk):
            m = mask[b]
            bits = float(nll[b][m].sum()) / ln2
            sketch_bits.append(bits)
            total_bits += bits
            total_tokens += int(m.sum())
            correct += int((pred[b][m] == targets[b][m]).sum())
            positions = triples[b, 1:, 2]
            nprims = int(positions.max(initial=0))
            prim_counts.append(nprims)
            for p in range(1, nprims + 1):
                sel = m & (positions == p)
                per_pos_sums[p] = per_pos_sums.get(p, 0.0) + float(nll[b][sel].sum()) / ln2
                per_pos_counts[p] = per_pos_counts.get(p, 0) + 1

    n = len(seqs)
    bits_per_sketch = total_bits / n if n else 0.0
    mean_prims = (sum(prim_counts) / n) if n else 0.0
    maxp = max(per_pos_counts) if per_pos_counts else 0
    curve = [per_pos_sums[p] / per_pos_counts[p] for p in range(1, maxp + 1)]
    return EvalReport(
        bits_per_primitive=bits_per_sketch / mean_prims if mean_prims else 0.0,
        bits_per_sketch=bits_per_sketch,
        token_accuracy=correct / total_tokens if total_tokens else 0.0,
        per_position_nll=curve,
        sketch_count=n,
        token_count=total_tokens,
    )


def evaluate_nll(model, seqs: list[list[tk.TokenTriple]]) -> EvalReport:
    """Teacher-forced next-token NLL of a primitive model over a tokenized
    split, in bits, plus accuracy and the per-primitive-position curve."""

    def logits_fn(triples, real):
        return model.forward(triples, real).data

    return _evaluate_stream(logits_fn, seqs)


def uniform_baseline(seqs: list[list[tk.TokenTriple]],
                     vocab: int = tk.PRIMITIVE_VOCAB_SIZE) -> EvalReport:
    """Every value token gets probability 1/vocab (zero logits), evaluated
    through the same code path as evaluate_nll so the two agree exactly."""

    def logits_fn(triples, real):
        return np.zeros(triples.shape[:2] + (vocab,))

    return _evaluate_stream(logits_fn, seqs)


def compression_baseline(seqs: list[list[tk.TokenTriple]]) -> tuple[float, float]:
    """LZMA-compressed bits per primitive and per sketch.

    Value tokens are packed one per byte (the 73-symbol vocabulary does not
    fit 6 bits); LZMA's adaptive literal coder squeezes out the unused range.
    Compression runs over the whole concatenated corpus.
    """
    if not seqs:
        warnings.warn("compression baseline on an empty split is defined as 0")
        return 0.0, 0.0
    payload = bytes(t.value for seq in seqs for t in seq)
    compressed = lzma.compress(payload, preset=9)
    total_bits = len(compressed) * 8
    n = len(seqs)
    prim_count = sum(max((t.position for t in seq), default=0) for seq in seqs)
    bits_per_sketch = total_bits / n
    bits_per_prim = total_bits / prim_count if prim_count else 0.0
    return bits_per_prim, bits_per_sketch


# ---------------------------------------------------------------------------
# Distributional statistics
# ---------------------------------------------------------------------------

_STAT_NAMES = ("primitives", "constraints", "dof_total", "dof_removed", "dof_net")


def _sketch_stats(s: Sketch) -> dict[str, int]:
    d = degrees_of_freedom(s)
    return {
        "primitives": len(s.primitives),
        "constraints": len(s.constraints),
        "dof_total": d.total,
        "dof_removed": d.removed,
        "dof_net": d.net,
    }


@dataclass
class StatsReport:
    """Per-metric histograms of samples vs reference with bootstrap bands."""

    metrics: dict  # name -> {bins, sample_freq, reference_freq, ci_low, ci_high}

    def to_csv(self, name: str) -> str:
        m = self.metrics[name]
        lines = ["bin,sample_freq,ci_low,ci_high,reference_freq"]
        for i, b in enumerate(m["bins"]):
            lines.append(
                f"{b},{m['sample_freq'][i]!r},{m['ci_low'][i]!r},"
                f"{m['ci_high'][i]!r},{m['reference_freq'][i]!r}"
            )
        return "\n".join(lines) + "\n"


def distributional_stats(
    samples: list[Sketch],
    reference: list[Sketch],
    out_dir=None,
    n_boot: int = 1000,
    seed: int = 0,
) -> StatsReport:
    """Histograms of primitive/constraint/DOF counts with 95% bootstrap
    confidence bands on the sample frequencies; optionally writes CSV + SVG."""
    if not samples or not reference:
        raise ValueError("both collections must be nonempty")
    rng = np.random.default_rng(seed)
    sample_rows = [_sketch_stats(s) for s in samples]
    ref_rows = [_sketch_stats(s) for s in reference]
    metrics = {}
    for name in _STAT_NAMES:
        sv = np.array([r[name] for r in sample_rows])
        rv = np.array([r[name] for r in ref_rows])
        lo = int(min(sv.min(), rv.min()))
        hi = int(max(sv.max(), rv.max()))
        bins = np.arange(lo, hi + 1)
        sfreq = np.array([(sv == b).mean() for b in bins])
        rfreq = np.array([(rv == b).mean() for b in bins])
        boots = np.empty((n_boot, len(bins)))
        for k in range(n_boot):
            draw = rng.choice(sv, size=len(sv), replace=True)
            boots[k] = [(draw == b).mean() for b in bins]
        metrics[name] = {
            "bins": bins,
            "sample_freq": sfreq,
            "reference_freq": rfreq,
            "ci_low": np.percentile(boots, 2.5, axis=0),
            "ci_high": np.percentile(boots, 97.5, axis=0),
        }
    report = StatsReport(metrics)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in _STAT_NAMES:
            (out_dir / f"{name}.csv").write_text(report.to_csv(name))
        _plot_stats(report, out_dir)
    return report


def _plot_stats(report: StatsReport, out_dir: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for name, m in report.metrics.items():
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.fill_between(m["bins"], m["ci_low"], m["ci_high"], alpha=0.3,
                        color="tab:blue", label="samples 95% CI")
        ax.plot(m["bins"], m["sample_freq"], color="tab:blue", label="samples")
        ax.plot(m["bins"], m["reference_freq"], color="tab:orange", label="reference")
        ax.set_xlabel(name.replace("_", " "))
        ax.set_ylabel("frequency")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_dir / f"{name}.svg")
        plt.close(fig)


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

def rectangle_constraints(base: int) -> list[Constraint]:
    """Full constraint set of an axis-aligned rectangle whose four lines
    start at primitive index ``base`` (chained head-to-tail)."""
    i0, i1, i2, i3 = base, base + 1, base + 2, base + 3
    return [
        Constraint(ConstraintKind.COINCIDENT, (Reference(i0, Slot.SECOND), Reference(i1, Slot.FIRST))),
        Constraint(ConstraintKind.COINCIDENT, (Reference(i1, Slot.SECOND), Reference(i2, Slot.FIRST))),
        Constraint(ConstraintKind.COINCIDENT, (Reference(i2, Slot.SECOND), Reference(i3, Slot.FIRST))),
        Constraint(ConstraintKind.COINCIDENT, (Reference(i3, Slot.SECOND), Reference(i0, Slot.FIRST))),
        Constraint(ConstraintKind.HORIZONTAL, (Reference(i0),)),
        Constraint(ConstraintKind.HORIZONTAL, (Reference(i2),)),
        Constraint(ConstraintKind.VERTICAL, (Reference(i1),)),
        Constraint(ConstraintKind.VERTICAL, (Reference(i3),)),
    ]


def _rect_lines(x0, y0, w, h):
    return [
        line(x0, y0, x0 + w, y0),
        line(x0 + w, y0, x0 + w, y0 + h),
        line(x0 + w, y0 + h, x0, y0 + h),
        line(x0, y0 + h, x0, y0),
    ]


def make_rectangle(rng: np.random.Generator) -> Sketch:
    """One constrained rectangle (4 primitives; below the ingest filter, but
    handy as a fixture and for DOF statistics)."""
    x0, y0 = rng.uniform(-4, 4, 2)
    w, h = rng.uniform(0.5, 4, 2)
    return Sketch(tuple(_rect_lines(x0, y0, w, h)),
                  sort_constraints(rectangle_constraints(0)))


def make_rectangles_sketch(rng: np.random.Generator, n_rects: int | None = None) -> Sketch:
    """Two or three disjoint constrained rectangles (8-12 primitives)."""
    n_rects = n_rects or int(rng.integers(2, 4))
    prims: list = []
    cons: list[Constraint] = []
    for k in range(n_rects):
        x0 = -5.0 + 4.0 * k + rng.uniform(0, 1.5)
        y0 = rng.uniform(-2, 2)
        w, h = rng.uniform(0.8, 2.8, 2)
        cons.extend(rectangle_constraints(len(prims)))
        prims.extend(_rect_lines(x0, y0, w, h))
    return Sketch(tuple(prims), sort_constraints(cons))


def make_slotted_plate(rng: np.random.Generator) -> Sketch:
    """Rectangular plate with two equal bolt holes on a horizontal line."""
    x0, y0 = rng.uniform(-3, 3, 2)
    w = rng.uniform(2.5, 6)
    h = rng.uniform(1.2, 3.0)
    r = rng.uniform(0.15, 0.45) * h / 2
    cy = y0 + h * rng.uniform(0.3, 0.7)
    inset = w * rng.uniform(0.12, 0.35)
    prims = _rect_lines(x0, y0, w, h) + [
        circle(x0 + inset, cy, r),
        circle(x0 + w - inset, cy, r),
    ]
    cons = rectangle_constraints(0) + [
        Constraint(ConstraintKind.EQUAL, (Reference(4), Reference(5))),
        Constraint(ConstraintKind.HORIZONTAL, (Reference(4, Slot.CENTER), Reference(5, Slot.CENTER))),
    ]
    return Sketch(tuple(prims), sort_constraints(cons))


def make_bolt_circle(rng: np.random.Generator) -> Sketch:
    """Construction pitch circle with equal holes pinned onto it."""
    cx, cy = rng.uniform(-2, 2, 2)
    pitch_r = rng.uniform(1.2, 3.5)
    hole_r = pitch_r * rng.uniform(0.1, 0.24)
    n_holes = int(rng.integers(4, 7))
    phase = (math.pi / 2) * rng.integers(4)  # hole 0 sits on a random axis
    prims = [point(cx, cy, construction=True), circle(cx, cy, pitch_r, construction=True)]
    cons = [
        Constraint(ConstraintKind.COINCIDENT, (Reference(0), Reference(1, Slot.CENTER))),
        Constraint(ConstraintKind.QUADRANT, (Reference(2, Slot.CENTER), Reference(1))),
    ]
    for k in range(n_holes):
        t = phase + 2 * math.pi * k / n_holes
        prims.append(circle(cx + pitch_r * math.cos(t), cy + pitch_r * math.sin(t), hole_r))
        idx = 2 + k
        cons.append(
            Constraint(ConstraintKind.COINCIDENT, (Reference(idx, Slot.CENTER), Reference(1)))
        )
        if k > 0:
            cons.append(Constraint(ConstraintKind.EQUAL, (Reference(2), Reference(idx))))
    return Sketch(tuple(prims), sort_constraints(cons))


def make_slot_plate(rng: np.random.Generator) -> Sketch:
    """Stadium slot: two horizontal lines capped by semicircular arcs, with
    concentric holes at each end."""
    x0, y0 = rng.uniform(-2, 2, 2)
    length = rng.uniform(2.0, 5.5)
    h = rng.uniform(0.8, 2.0)
    r = h / 2
    hole = r * rng.uniform(0.3, 0.6)
    cy = y0 + r
    xl, xr = x0, x0 + length
    prims = [
        line(xl, y0, xr, y0),
        arc(xr, y0, xr + r, cy, xr, y0 + h),
        line(xr, y0 + h, xl, y0 + h),
        arc(xl, y0 + h, xl - r, cy, xl, y0),
        circle(xl, cy, hole),
        circle(xr, cy, hole),
    ]
    cons = [
        Constraint(ConstraintKind.COINCIDENT, (Reference(0, Slot.SECOND), Reference(1, Slot.FIRST))),
        Constraint(ConstraintKind.COINCIDENT, (Reference(1, Slot.SECOND), Reference(2, Slot.FIRST))),
        Constraint(ConstraintKind.COINCIDENT, (Reference(2, Slot.SECOND), Reference(3, Slot.FIRST))),
        Constraint(ConstraintKind.COINCIDENT, (Reference(3, Slot.SECOND), Reference(0, Slot.FIRST))),
        Constraint(ConstraintKind.HORIZONTAL, (Reference(0),)),
        Constraint(ConstraintKind.HORIZONTAL, (Reference(2),)),
        Constraint(ConstraintKind.EQUAL, (Reference(1), Reference(3))),
        Constraint(ConstraintKind.CONCENTRIC, (Reference(3), Reference(4))),
        Constraint(ConstraintKind.CONCENTRIC, (Reference(1), Reference(5))),
        Constraint(ConstraintKind.EQUAL, (Reference(4), Reference(5))),
    ]
    return Sketch(tuple(prims), sort_constraints(cons))


def make_coincidence_web(rng: np.random.Generator) -> Sketch:
    """Random lines with marker points pinned onto randomly chosen endpoints.

    Which endpoint each coincidence references is only recoverable from the
    coordinates, so this family forces the constraint model to actually read
    primitive geometry (the hard case for noisy reference selection).
    """
    n_lines = int(rng.integers(4, 7))
    lines = []
    ends: list[tuple[int, Slot, float, float]] = []
    guard = 0
    while len(lines) < n_lines and guard < 200:
        guard += 1
        x1, y1 = rng.uniform(-2, 2, 2)
        ang = rng.uniform(0, 2 * math.pi)
        length = rng.uniform(0.8, 2.2)
        x2, y2 = x1 + length * math.cos(ang), y1 + length * math.sin(ang)
        cand = [(x1, y1), (x2, y2)]
        if any(
            math.hypot(cx - ex, cy - ey) < 0.35
            for cx, cy in cand
            for _, _, ex, ey in ends
        ):
            continue
        idx = len(lines)
        lines.append(line(x1, y1, x2, y2))
        ends.append((idx, Slot.FIRST, x1, y1))
        ends.append((idx, Slot.SECOND, x2, y2))
    n_points = int(rng.integers(2, min(5, 2 * len(lines))))
    pick = rng.choice(len(ends), size=n_points, replace=False)
    prims = list(lines)
    cons = []
    for e in pick:
        li, slot, ex, ey = ends[int(e)]
        prims.append(point(ex, ey))
        cons.append(
            Constraint(
                ConstraintKind.COINCIDENT,
                (Reference(len(prims) - 1), Reference(li, slot)),
            )
        )
    return Sketch(tuple(prims), sort_constraints(cons))


_FAMILIES = {
    "rectangles": make_rectangles_sketch,
    "slotted_plate": make_slotted_plate,
    "bolt_circle": make_bolt_circle,
    "slot_plate": make_slot_plate,
    "rectangle": make_rectangle,
    "coincidence_web": make_coincidence_web,
}


def generate_corpus(kind: str, count: int, seed: int = 0) -> list[Sketch]:
    """Synthetic sketches of one family, or 'mixed' across the filter-passing
    families."""
    rng = np.random.default_rng(seed)
    if kind == "mixed":
        fams = ["rectangles", "slotted_plate", "bolt_circle", "slot_plate", "coincidence_web"]
        return [_FAMILIES[fams[rng.integers(len(fams))]](rng) for _ in range(count)]
    if kind not in _FAMILIES:
        raise ValueError(f"unknown corpus family {kind!r} (have {sorted(_FAMILIES)})")
    return [_FAMILIES[kind](rng) for _ in range(count)]


def write_corpus(sketches: list[Sketch], directory) -> list[str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = []
    for i, s in enumerate(sketches):
        sid = f"sk_{i:05d}"
        (directory / f"{sid}.json").write_text(json.dumps(sketch_to_json(s)))
        ids.append(sid)
    return ids


def prepare_corpus(sketches: list[Sketch]) -> list[Sketch]:
    """Normalize sketches for tokenization/training; drops degenerate ones."""
    out = []
    for s in sketches:
        try:
            out.append(normalize_sketch(s)[0])
        except DegenerateExtent:
            continue
    return out
