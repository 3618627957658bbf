"""Wire-protocol server over a pretrained masked language model.

Endpoints (JSON over HTTP, natural-log probabilities):

    GET  /v1/info           model name, language, vocab size, max length
    GET  /v1/vocab          every token string, ordered by id
    POST /v1/tokenize       text -> tokens with offsets and special flags
    POST /v1/mask_logprobs  token ids + mask positions -> one log-softmax
                            row per position (single forward pass with all
                            listed positions replaced by the mask token)

Inference runs in deterministic eval mode behind a single model lock;
identical requests produce identical response bytes. Correctness over
throughput: no request batching in v1.
"""

from __future__ import annotations

import argparse
import logging
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from typing import Any

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

logger = logging.getLogger(__name__)


@dataclass
class ShimConfig:
    model: str
    device: str = "cpu"
    max_sequence_length: int | None = None  # None: use the model's maximum
    host: str = "127.0.0.1"
    port: int = 8700
    language: str = "und"


class TokenizeRequest(BaseModel):
    text: str


class MaskLogprobsRequest(BaseModel):
    token_ids: list[int]
    mask_positions: list[int]


@dataclass
class _ModelState:
    tokenizer: Any
    model: Any
    device: str
    vocab: list[str]
    vocab_size: int
    max_sequence_length: int
    lock: threading.Lock = field(default_factory=threading.Lock)


def _load_state(config: ShimConfig) -> _ModelState:
    import torch
    from transformers import AutoModelForMaskedLM, AutoTokenizer

    logger.info("loading model %s", config.model)
    tokenizer = AutoTokenizer.from_pretrained(config.model)
    if not getattr(tokenizer, "is_fast", False):
        raise ValueError("a fast tokenizer is required (offset mappings)")
    if tokenizer.mask_token_id is None:
        raise ValueError("tokenizer has no mask token; not a masked LM")
    model = AutoModelForMaskedLM.from_pretrained(config.model)
    model.eval()
    model.to(config.device)
    torch.set_grad_enabled(False)
    # single-threaded matmuls keep responses byte-identical across runs
    torch.set_num_threads(1)

    vocab_size = int(model.config.vocab_size)
    if len(tokenizer) > vocab_size:
        raise ValueError(
            f"tokenizer has {len(tokenizer)} tokens but the model embeds only "
            f"{vocab_size}"
        )
    tokens = tokenizer.convert_ids_to_tokens(list(range(len(tokenizer))))
    vocab = [t if t is not None else f"[unused{i}]" for i, t in enumerate(tokens)]
    vocab += [f"[unused{i}]" for i in range(len(vocab), vocab_size)]

    model_max = int(
        getattr(model.config, "max_position_embeddings", tokenizer.model_max_length)
    )
    max_len = config.max_sequence_length or model_max
    if max_len > model_max:
        raise ValueError(
            f"max_sequence_length {max_len} exceeds the model maximum {model_max}"
        )
    return _ModelState(
        tokenizer=tokenizer,
        model=model,
        device=config.device,
        vocab=vocab,
        vocab_size=vocab_size,
        max_sequence_length=max_len,
    )


def create_app(config: ShimConfig) -> FastAPI:
    state: dict[str, _ModelState] = {}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state["model"] = _load_state(config)
        yield
        state.clear()

    app = FastAPI(title="mlm-shim", lifespan=lifespan)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def require_state() -> _ModelState:
        loaded = state.get("model")
        if loaded is None:
            raise HTTPException(status_code=503, detail="model is loading")
        return loaded

    @app.get("/v1/info")
    def info() -> dict:
        loaded = require_state()
        return {
            "model_name": config.model,
            "language": config.language,
            "vocab_size": loaded.vocab_size,
            "max_sequence_length": loaded.max_sequence_length,
        }

    @app.get("/v1/vocab")
    def vocab() -> dict:
        return {"tokens": require_state().vocab}

    @app.post("/v1/tokenize")
    def tokenize(body: TokenizeRequest) -> dict:
        loaded = require_state()
        if not body.text:
            raise HTTPException(status_code=400, detail="text must be non-empty")
        encoded = loaded.tokenizer(
            body.text,
            return_offsets_mapping=True,
            return_special_tokens_mask=True,
            add_special_tokens=True,
        )
        ids = encoded["input_ids"]
        if len(ids) > loaded.max_sequence_length:
            raise HTTPException(status_code=413, detail="sequence too long")
        texts = loaded.tokenizer.convert_ids_to_tokens(ids)
        return {
            "tokens": [
                {
                    "id": int(token_id),
                    "text": text,
                    "start": int(start),
                    "end": int(end),
                    "special": bool(special),
                }
                for token_id, text, (start, end), special in zip(
                    ids,
                    texts,
                    encoded["offset_mapping"],
                    encoded["special_tokens_mask"],
                )
            ]
        }

    @app.post("/v1/mask_logprobs")
    def mask_logprobs(body: MaskLogprobsRequest) -> dict:
        import torch

        loaded = require_state()
        ids = body.token_ids
        positions = body.mask_positions
        if not ids or not positions:
            raise HTTPException(
                status_code=400, detail="token_ids and mask_positions required"
            )
        if len(ids) > loaded.max_sequence_length:
            raise HTTPException(status_code=413, detail="sequence too long")
        if len(set(positions)) != len(positions):
            raise HTTPException(status_code=400, detail="duplicate mask position")
        for p in positions:
            if not 0 <= p < len(ids):
                raise HTTPException(status_code=400, detail=f"position {p} out of range")
        for i in ids:
            if not 0 <= i < loaded.vocab_size:
                raise HTTPException(status_code=400, detail=f"token id {i} out of range")

        masked = list(ids)
        for p in positions:
            masked[p] = loaded.tokenizer.mask_token_id
        with loaded.lock:
            input_ids = torch.tensor([masked], device=loaded.device)
            logits = loaded.model(input_ids=input_ids).logits[0]
            rows = torch.log_softmax(logits[positions, :], dim=-1).to("cpu")
        return {"log_probs": [row.tolist() for row in rows]}

    return app


def serve(config: ShimConfig) -> None:
    """Run the server until interrupted."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mlm-shim", description="Serve a masked LM over the probing wire protocol."
    )
    parser.add_argument("--model", required=True, help="model identifier or local path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-sequence-length", type=int, default=None)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8700)
    parser.add_argument("--language", default="und")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    serve(
        ShimConfig(
            model=args.model,
            device=args.device,
            max_sequence_length=args.max_sequence_length,
            host=args.host,
            port=args.port,
            language=args.language,
        )
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
