"""HTTP embedding endpoint with the same semantics as the file path.

POST /embed with {"texts": [...]} returns {"vectors": [[...], ...]}. Malformed
or empty bodies get a 400 with a message rather than a framework 422, so
clients see one consistent error shape.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from embed_sidecar.encoder import EmbeddingModel, EncoderError, encode_texts


def create_app(model: EmbeddingModel, normalize: bool = True) -> FastAPI:
    app = FastAPI(title="embedding sidecar")

    @app.post("/embed")
    async def embed(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        if not isinstance(body, dict) or "texts" not in body:
            return JSONResponse({"error": "body must be {'texts': [...]}"}, status_code=400)
        texts = body["texts"]
        if not isinstance(texts, list) or not texts:
            return JSONResponse({"error": "'texts' must be a non-empty list"}, status_code=400)
        if not all(isinstance(t, str) for t in texts):
            return JSONResponse({"error": "'texts' entries must be strings"}, status_code=400)
        try:
            vectors = encode_texts(model, texts, normalize=normalize)
        except EncoderError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return {"vectors": [[float(x) for x in row] for row in vectors]}

    @app.get("/health")
    async def health():
        return {"status": "ok", "dim": model.dim}

    return app
