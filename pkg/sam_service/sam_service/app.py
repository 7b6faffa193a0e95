"""HTTP front end: POST /segment under the prompt-mask wire format.

Request: {"image_png_b64": str, "prompts": [{"x", "y", "positive"}, ...],
"multimask": bool} -> {"masks": [{"polygon": [[x, y], ...], "score": s}]}.
Stub mode answers with the deterministic region grower; sam mode runs a
loaded checkpoint. Errors: 400 malformed request, 413 oversized image,
503 model not loaded. The service keeps no state between requests.
"""

import argparse
import base64
import binascii
import io
import threading
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from sam_service.config import ServiceConfig
from sam_service.stub import boundary_loops, segment_gray, shoelace


class _SamBackend:
    """Checkpoint-backed predictor; inference serialized behind one lock."""

    def __init__(self, checkpoint: str, device: str):
        from segment_anything import SamPredictor, sam_model_registry

        kind = next((k for k in ("vit_h", "vit_l", "vit_b") if k in checkpoint), "vit_h")
        model = sam_model_registry[kind](checkpoint=checkpoint)
        model.to(device)
        self._predictor = SamPredictor(model)
        self._lock = threading.Lock()

    def masks(self, gray: np.ndarray, prompts) -> list:
        coords = np.array([[x, y] for x, y, _ in prompts], dtype=np.float32)
        labels = np.array([1 if positive else 0 for _, _, positive in prompts])
        rgb = np.stack([gray] * 3, axis=-1)
        with self._lock:
            self._predictor.set_image(rgb)
            scored, scores, _ = self._predictor.predict(
                point_coords=coords, point_labels=labels, multimask_output=False
            )
        best = scored[int(np.argmax(scores))].astype(bool)
        score = float(np.max(scores))
        return [
            {"polygon": loop, "score": score}
            for loop in boundary_loops(best)
            if shoelace(loop) > 0
        ]


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=400)


def create_app(config: Optional[ServiceConfig] = None) -> FastAPI:
    config = config or ServiceConfig.from_env()
    app = FastAPI(title="sam-service")

    backend = None
    if config.mode == "sam":
        try:
            backend = _SamBackend(config.checkpoint, config.device)
        except Exception:
            backend = None  # /segment reports 503 until a model loads

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "backend": config.mode}

    @app.post("/segment")
    async def segment(request: Request):
        if config.mode == "sam" and backend is None:
            return JSONResponse({"error": "model not loaded"}, status_code=503)

        try:
            doc = (await request.json())
        except Exception:
            return _bad_request("body is not valid JSON")
        if not isinstance(doc, dict):
            return _bad_request("body must be a JSON object")

        encoded = doc.get("image_png_b64")
        if not isinstance(encoded, str):
            return _bad_request("image_png_b64 must be a base64 string")
        try:
            blob = base64.b64decode(encoded, validate=True)
        except (binascii.Error, ValueError):
            return _bad_request("image_png_b64 is not valid base64")
        try:
            image = Image.open(io.BytesIO(blob))
            width, height = image.size
        except UnidentifiedImageError:
            return _bad_request("image_png_b64 does not decode to an image")
        if width > config.max_dim or height > config.max_dim:
            return JSONResponse(
                {"error": f"image {width}x{height} exceeds the {config.max_dim} pixel cap"},
                status_code=413,
            )
        if image.mode != "L":
            return _bad_request(f"expected an 8-bit grayscale image, got mode {image.mode}")
        gray = np.asarray(image, dtype=np.uint8)

        raw_prompts = doc.get("prompts")
        if not isinstance(raw_prompts, list):
            return _bad_request("prompts must be a list")
        prompts = []
        for i, entry in enumerate(raw_prompts):
            if not isinstance(entry, dict):
                return _bad_request(f"prompt {i} must be an object")
            x, y = entry.get("x"), entry.get("y")
            positive = entry.get("positive", True)
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (x, y)):
                return _bad_request(f"prompt {i} needs numeric x and y")
            if not isinstance(positive, bool):
                return _bad_request(f"prompt {i} positive flag must be boolean")
            col, row = int(round(x)), int(round(y))
            if not (0 <= col < width and 0 <= row < height):
                return _bad_request(f"prompt {i} at ({x}, {y}) is outside the {width}x{height} image")
            prompts.append((float(x), float(y), positive))

        if backend is not None:
            masks = backend.masks(gray, prompts)
        else:
            masks = segment_gray(gray, prompts)
        return JSONResponse({"masks": masks})

    return app


def main(argv=None) -> int:
    base = ServiceConfig.from_env()
    parser = argparse.ArgumentParser(
        prog="sam-service",
        description="Prompt-driven segmentation over HTTP; flags override SAM_SERVICE_* variables",
    )
    parser.add_argument("--mode", choices=("sam", "stub"), default=base.mode)
    parser.add_argument("--checkpoint", default=base.checkpoint)
    parser.add_argument("--device", default=base.device)
    parser.add_argument("--port", type=int, default=base.port)
    parser.add_argument("--max-dim", type=int, default=base.max_dim)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args(argv)

    config = ServiceConfig(
        checkpoint=args.checkpoint,
        device=args.device,
        port=args.port,
        mode=args.mode,
        max_dim=args.max_dim,
    )
    import uvicorn

    uvicorn.run(create_app(config), host=args.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
