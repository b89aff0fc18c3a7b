"""HTTP surface: POST /v1/score and GET /v1/capabilities around a judge.

Request bodies are parsed by hand instead of through framework validation so
every rejection is a protocol-shaped error: HTTP 400 with
``{"error": {"code", "message"}}``, never a framework-specific body. The
optional bearer token turns mismatches into the same shape at 401.
"""

from __future__ import annotations

import base64
import binascii
import math
import time

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .judges import JudgeModel

MODES = ("distribution", "nll")


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def create_app(judge: JudgeModel, token: str | None = None) -> FastAPI:
    app = FastAPI(title="caire scoring adapter", docs_url=None, redoc_url=None)

    def check_auth(request: Request) -> JSONResponse | None:
        if token is None:
            return None
        header = request.headers.get("Authorization", "")
        if header != f"Bearer {token}":
            return _error(401, "unauthorized", "missing or invalid bearer token")
        return None

    @app.get("/v1/capabilities")
    async def capabilities(request: Request):
        denied = check_auth(request)
        if denied is not None:
            return denied
        return {
            "modes": list(MODES),
            "image_b64": judge.supports_images,
            "image_uri": False,
            "model": judge.identifier,
        }

    @app.post("/v1/score")
    async def score(request: Request):
        denied = check_auth(request)
        if denied is not None:
            return denied
        try:
            body = await request.json()
        except Exception:
            return _error(400, "invalid_request", "body must be JSON")
        if not isinstance(body, dict):
            return _error(400, "invalid_request", "body must be a JSON object")

        mode = body.get("mode")
        prompt = body.get("prompt")
        completion = body.get("completion")
        request_id = str(body.get("request_id", ""))

        if mode not in MODES:
            return _error(400, "unsupported_mode", f"mode must be one of {MODES}, got {mode!r}")
        if not isinstance(prompt, str):
            return _error(400, "invalid_request", "prompt must be a string")
        if mode == "nll" and not completion:
            return _error(400, "invalid_request", "nll mode requires completion")
        if mode == "distribution" and completion is not None:
            return _error(400, "invalid_request", "distribution mode takes no completion")

        image: bytes | None = None
        if body.get("image_b64"):
            if not judge.supports_images:
                return _error(400, "unsupported_image", "this backend is text-only")
            try:
                image = base64.b64decode(body["image_b64"], validate=True)
            except (binascii.Error, ValueError):
                return _error(400, "invalid_request", "image_b64 is not valid base64")
        elif body.get("image_uri"):
            return _error(400, "unsupported_image", "image_uri payloads are not served here")

        started = time.monotonic()
        if mode == "distribution":
            probs = judge.score_distribution(prompt, image)
            if len(probs) != 5 or any(p < 0 or not math.isfinite(p) for p in probs):
                return _error(500, "internal", "judge produced an invalid distribution")
            total = sum(probs)
            probs = tuple(p / total for p in probs)  # renormalize over the 5 tokens
            payload: dict = {"probs": list(probs)}
        else:
            nll = judge.completion_nll(prompt, completion, image)
            if not math.isfinite(nll):
                return _error(500, "internal", "judge produced a non-finite nll")
            payload = {"nll": float(nll)}

        payload.update(
            {
                "request_id": request_id,
                "backend": judge.identifier,
                "latency_ms": round((time.monotonic() - started) * 1000, 3),
            }
        )
        return payload

    return app


def serve(judge: JudgeModel, host: str = "127.0.0.1", port: int = 8008,
          token: str | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(judge, token=token), host=host, port=port, log_level="warning")
