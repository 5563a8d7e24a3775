"""FastAPI application implementing the logprob wire protocol.

POST /v1/logprob
    {"sentences": [{"id": int >= 0, "text": str}, ...],
     "query": str, "history": str, "target": str (non-empty)}
    -> 200 {"logprob": float}
    -> 400 on any schema violation, oversized request, or unscorable target
    -> 503 when more than ``max_pending`` requests are already queued
GET /healthz -> 200 "ok"

UTF-8 JSON, no streaming. Forward passes are serialized by the backend;
concurrent connections queue up to the pending cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from threading import Semaphore

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .model import CausalLMBackend, EmptyTargetError, PromptTooLongError
from .prompts import build_prompt


@dataclass(frozen=True)
class ServiceConfig:
    max_pending: int = 8
    max_request_chars: int = 2_000_000


class SentenceIn(BaseModel):
    id: int = Field(ge=0)
    text: str


class LogprobRequest(BaseModel):
    sentences: list[SentenceIn]
    query: str
    history: str
    target: str = Field(min_length=1)


def create_app(backend: CausalLMBackend,
               config: ServiceConfig = ServiceConfig()) -> FastAPI:
    app = FastAPI(title="scorer-service", docs_url=None, redoc_url=None)
    gate = Semaphore(config.max_pending)

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors()[:3])})

    @app.get("/healthz")
    def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.post("/v1/logprob")
    def logprob(req: LogprobRequest) -> JSONResponse:
        size = (sum(len(s.text) for s in req.sentences)
                + len(req.query) + len(req.history) + len(req.target))
        if size > config.max_request_chars:
            return JSONResponse(status_code=400, content={
                "error": f"request holds {size} chars > "
                         f"limit {config.max_request_chars}"})
        if not gate.acquire(blocking=False):
            return JSONResponse(status_code=503, content={"error": "busy"})
        try:
            prompt = build_prompt([s.model_dump() for s in req.sentences],
                                  req.query, req.history)
            value = backend.logprob(prompt, req.target)
        except (PromptTooLongError, EmptyTargetError) as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        finally:
            gate.release()
        return JSONResponse(content={"logprob": value})

    return app
