"""HTTP/JSON facade over the toolkit.

Every response body carries {"ok": bool} plus "result" on success or
"error": {code, message, location} on failure.  A non-convergent solve
answers 409 but still ships the best-effort sketch in "result" so
interactive clients can display it.
"""

from __future__ import annotations

import base64
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import tokenizer as tk
from .core import (
    DegenerateExtent,
    Sketch,
    SketchError,
    degrees_of_freedom,
    denormalize_sketch,
    normalize_sketch,
    sketch_from_json,
    sketch_to_json,
)
from .handdraw import NoiseConfig, rasterize_sketch, simulate_hand_drawing
from .seqmodel import (
    CONSTRAINT_NUCLEUS_P,
    PRIMITIVE_NUCLEUS_P,
    ConstraintModel,
    SamplerConfig,
    generate_constraints,
    generate_primitives,
    load_checkpoint,
)
from .solver import SolveOptions, UnsupportedPair, check_satisfied, solve

__all__ = ["ServiceConfig", "create_app", "ApiError"]


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, location=None, result=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.location = location
        self.result = result


@dataclass
class ServiceConfig:
    checkpoint_dir: Path | None = None


class _CheckpointCache:
    def __init__(self, root: Path | None):
        self.root = root
        self._lock = threading.Lock()
        self._models: dict[str, object] = {}

    def resolve(self, name: str) -> Path:
        p = Path(name)
        candidates = [p]
        if not name.endswith(".npz"):
            candidates.append(Path(name + ".npz"))
        if self.root is not None:
            for c in list(candidates):
                candidates.append(self.root / c)
        for c in candidates:
            if c.is_file():
                return c
        raise ApiError(404, "unknown_checkpoint", f"checkpoint {name!r} not found")

    def get(self, name: str):
        path = self.resolve(name)
        key = str(path.resolve())
        with self._lock:
            if key not in self._models:
                self._models[key] = load_checkpoint(path)
            return self._models[key]


def _envelope_ok(result) -> dict:
    return {"ok": True, "result": result}


def _envelope_err(code: str, message: str, location=None, result=None) -> dict:
    body = {"ok": False, "error": {"code": code, "message": message, "location": location}}
    if result is not None:
        body["result"] = result
    return body


def _need(payload: dict, key: str):
    if key not in payload:
        raise ApiError(400, "malformed", f"missing field {key!r}", location=key)
    return payload[key]


def _parse_sketch(payload: dict, key: str = "sketch") -> Sketch:
    try:
        return sketch_from_json(_need(payload, key))
    except SketchError as e:
        raise ApiError(400, "malformed", str(e), location=key) from e


def _report_json(report) -> dict:
    return {
        "converged": report.converged,
        "iterations": report.iterations,
        "residual_norm": report.residual_norm,
        "max_constraint_violation": report.max_constraint_violation,
    }


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    cache = _CheckpointCache(config.checkpoint_dir)
    app = FastAPI(title="sketchforge", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content=_envelope_err(exc.code, exc.message, exc.location, exc.result),
        )

    @app.exception_handler(RequestValidationError)
    async def _bad_request(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content=_envelope_err("malformed", str(exc))
        )

    @app.exception_handler(Exception)
    async def _unhandled(_req: Request, exc: Exception):
        return JSONResponse(
            status_code=500, content=_envelope_err("internal", f"{type(exc).__name__}: {exc}")
        )

    @app.get("/healthz")
    async def healthz():
        return _envelope_ok({"status": "healthy"})

    @app.post("/solve")
    async def solve_endpoint(payload: dict):
        s = _parse_sketch(payload)
        opts = SolveOptions(
            max_iter=int(payload.get("max_iter", 100)),
            tol=float(payload.get("tol_step", 1e-8)),
            w_anchor=float(payload.get("w_anchor", 1e-3)),
            violation_tol=float(payload.get("tol", 1e-6)),
        )
        try:
            solved, report = solve(s, opts)
        except UnsupportedPair as e:
            raise ApiError(400, "unsupported_pair", str(e)) from e
        result = {"sketch": sketch_to_json(solved), "report": _report_json(report)}
        if not report.converged:
            raise ApiError(
                409, "non_convergent",
                f"solve stopped at max violation {report.max_constraint_violation:g}",
                result=result,
            )
        return _envelope_ok(result)

    @app.post("/check")
    async def check_endpoint(payload: dict):
        s = _parse_sketch(payload)
        tol = float(payload.get("tol", 1e-6))
        try:
            ok = check_satisfied(s, tol)
        except UnsupportedPair as e:
            raise ApiError(400, "unsupported_pair", str(e)) from e
        return _envelope_ok({"satisfied": ok, "tol": tol})

    @app.post("/tokenize")
    async def tokenize_endpoint(payload: dict):
        s = _parse_sketch(payload)
        stream = payload.get("stream", "primitives")
        try:
            if stream == "primitives":
                tokens = tk.encode_primitives(s)
            elif stream == "constraints":
                tokens = tk.encode_constraints(s)
            else:
                raise ApiError(400, "malformed", f"unknown stream {stream!r}", "stream")
        except (tk.TooLong, tk.InvalidReference) as e:
            raise ApiError(400, "malformed", str(e)) from e
        return _envelope_ok(
            {"stream": stream, "tokens": [[t.value, t.id, t.position] for t in tokens]}
        )

    @app.post("/detokenize")
    async def detokenize_endpoint(payload: dict):
        raw = _need(payload, "tokens")
        try:
            tokens = [tk.TokenTriple(int(v), int(i), int(p)) for v, i, p in raw]
        except (TypeError, ValueError) as e:
            raise ApiError(400, "malformed", f"bad token triple: {e}", "tokens") from e
        stream = payload.get("stream", "primitives")
        try:
            if stream == "primitives":
                sketch = tk.decode_primitives(tokens)
            elif stream == "constraints":
                base = _parse_sketch(payload)
                cons = tk.decode_constraints(tokens, base)
                sketch = Sketch(base.primitives, cons)
            else:
                raise ApiError(400, "malformed", f"unknown stream {stream!r}", "stream")
        except (tk.MalformedSequence, tk.InvalidReference, SketchError) as e:
            raise ApiError(400, "malformed", str(e)) from e
        return _envelope_ok({"sketch": sketch_to_json(sketch)})

    @app.post("/render")
    async def render_endpoint(payload: dict):
        s = _parse_sketch(payload)
        try:
            norm, _ = normalize_sketch(s)
        except DegenerateExtent as e:
            raise ApiError(400, "malformed", str(e)) from e
        if payload.get("hand", False):
            noise = payload.get("noise", {})
            try:
                cfg = NoiseConfig(seed=int(payload.get("seed", 0)), **noise)
            except (TypeError, ValueError) as e:
                raise ApiError(400, "malformed", f"bad noise config: {e}", "noise") from e
            img = simulate_hand_drawing(norm, cfg)
        else:
            img = rasterize_sketch(norm)
        return _envelope_ok({"png_base64": base64.b64encode(img.to_png_bytes()).decode()})

    @app.post("/complete")
    async def complete_endpoint(payload: dict):
        primer_sketch = _parse_sketch(payload)
        model = cache.get(str(_need(payload, "checkpoint")))
        if getattr(model, "kind", "") not in ("primitive", "image_conditional"):
            raise ApiError(400, "malformed", "checkpoint is not a primitive model", "checkpoint")
        k = int(payload.get("k", 1))
        p = float(payload.get("nucleus_p", PRIMITIVE_NUCLEUS_P))
        seed = int(payload.get("seed", 0))
        # Models see unit-box sketches; completions map back to input space.
        try:
            norm, transform = normalize_sketch(primer_sketch)
        except DegenerateExtent as e:
            raise ApiError(400, "malformed", str(e)) from e
        primer = tk.encode_primitives(norm)[1:-1]  # drop Start and Stop
        completions = []
        stats = []
        for i in range(k):
            tokens, st = generate_primitives(
                model, SamplerConfig(nucleus_p=p, seed=seed + i), primer=primer
            )
            entry = {"stop_sampled": st.stop_sampled, "malformed": st.malformed,
                     "note": st.note, "decoded": False}
            try:
                sk = denormalize_sketch(tk.decode_primitives(tokens), transform)
                completions.append(sketch_to_json(sk))
                entry["decoded"] = True
            except (tk.MalformedSequence, SketchError) as e:
                completions.append(None)
                entry["note"] = str(e)
            stats.append(entry)
        return _envelope_ok({"completions": completions, "stats": stats})

    @app.post("/autoconstrain")
    async def autoconstrain_endpoint(payload: dict):
        s = _parse_sketch(payload)
        model = cache.get(str(_need(payload, "checkpoint")))
        if not isinstance(model, ConstraintModel):
            raise ApiError(400, "malformed", "checkpoint is not a constraint model", "checkpoint")
        p = float(payload.get("nucleus_p", CONSTRAINT_NUCLEUS_P))
        seed = int(payload.get("seed", 0))
        attempts = int(payload.get("attempts", 8))
        # Constraints carry no coordinates, so they transfer from the
        # normalized sketch (what the model saw in training) to the original.
        try:
            norm, _ = normalize_sketch(Sketch(s.primitives, ()))
        except DegenerateExtent as e:
            raise ApiError(400, "malformed", str(e)) from e
        last_note = ""
        for i in range(attempts):
            tokens, st = generate_constraints(
                model, norm, SamplerConfig(nucleus_p=p, seed=seed + i)
            )
            last_note = st.note
            try:
                cons = tk.decode_constraints(tokens, norm)
                result = Sketch(s.primitives, cons)
            except (tk.MalformedSequence, tk.InvalidReference, SketchError) as e:
                last_note = str(e)
                continue
            return _envelope_ok(
                {"sketch": sketch_to_json(result), "attempts": i + 1}
            )
        raise ApiError(
            422, "generation_failed",
            f"no decodable constraint sequence in {attempts} attempts: {last_note}",
        )

    @app.post("/dof")
    async def dof_endpoint(payload: dict):
        s = _parse_sketch(payload)
        d = degrees_of_freedom(s)
        return _envelope_ok({"total": d.total, "removed": d.removed, "net": d.net})

    return app
