"""Read-only HTTP JSON API over a finished run directory.

Serves epoch bundles (embeddings, landscape PNG, metrics slices), per-sample
trajectories and nearest-neighbor lookups to the explorer UI. The service
never writes to the run directory; loaded bundles are cached under a lock.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response

from .errors import BundleError
from .landscape import EpochBundle, load_bundle, sample_trajectory
from .pipeline import RunPaths

DEFAULT_PORT = 8000
PORT_ENV_VAR = "TRAINSCAPE_PORT"


class BundleStore:
    """Lazy epoch-bundle cache: single writer fills it, readers share it."""

    def __init__(self, run_dir):
        self.paths = RunPaths(Path(run_dir))
        self._lock = threading.Lock()
        self._bundles: dict[int, EpochBundle] = {}
        self._epochs: list[int] | None = None

    def epochs(self) -> list[int]:
        if self._epochs is None:
            with self._lock:
                if self._epochs is None:
                    found = sorted(int(p.name.split("_")[1])
                                   for p in self.paths.bundles_dir.glob("epoch_*"))
                    if not found:
                        raise BundleError(f"no bundles under {self.paths.bundles_dir}")
                    self._epochs = found
        return self._epochs

    def bundle(self, epoch: int) -> EpochBundle:
        if epoch not in self.epochs():
            raise KeyError(epoch)
        with self._lock:
            if epoch not in self._bundles:
                self._bundles[epoch] = load_bundle(self.paths.bundle_dir(epoch))
            return self._bundles[epoch]

    def config(self) -> dict:
        return json.loads(self.paths.config.read_text())


def create_app(run_dir, ui_dir=None) -> FastAPI:
    store = BundleStore(run_dir)
    app = FastAPI(title="trainscape", docs_url=None, redoc_url=None)

    if ui_dir is not None:
        ui_dir = Path(ui_dir)

        @app.get("/")
        def index():
            return Response(content=(ui_dir / "index.html").read_bytes(),
                            media_type="text/html")

        @app.get("/dist/{name}")
        def dist(name: str):
            path = (ui_dir / "dist" / name).resolve()
            if not str(path).startswith(str((ui_dir / "dist").resolve())) \
                    or not path.exists():
                return JSONResponse(status_code=404, content={"error": "not found"})
            return Response(content=path.read_bytes(),
                            media_type="text/javascript")

    @app.exception_handler(RequestValidationError)
    async def malformed_query(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed query",
                                                      "detail": exc.errors()})

    def _bundle_or_404(epoch: int):
        try:
            return store.bundle(epoch)
        except KeyError:
            return None

    @app.get("/api/meta")
    def meta():
        epochs = store.epochs()
        first = store.bundle(epochs[0])
        cfg = store.config()
        return {
            "epochs": epochs,
            "classes": first.class_count,
            "palette": [list(c) for c in first.palette],
            "dataset": {
                "kind": cfg["dataset"]["kind"],
                "n_samples": len(first.embeddings),
                "class_count": first.class_count,
            },
        }

    @app.get("/api/epoch/{epoch}/embeddings")
    def embeddings(epoch: int):
        bundle = _bundle_or_404(epoch)
        if bundle is None:
            return JSONResponse(status_code=404, content={"error": f"unknown epoch {epoch}"})
        return {"epoch": epoch,
                "extent": list(bundle.raster.extent),
                "samples": [r.to_json() for r in bundle.embeddings]}

    @app.get("/api/epoch/{epoch}/landscape.png")
    def landscape_png(epoch: int):
        bundle = _bundle_or_404(epoch)
        if bundle is None:
            return JSONResponse(status_code=404, content={"error": f"unknown epoch {epoch}"})
        png = (store.paths.bundle_dir(epoch) / "landscape.png").read_bytes()
        return Response(content=png, media_type="image/png")

    @app.get("/api/epoch/{epoch}/metrics")
    def metrics(epoch: int):
        bundle = _bundle_or_404(epoch)
        if bundle is None:
            return JSONResponse(status_code=404, content={"error": f"unknown epoch {epoch}"})
        return {"epoch": epoch, "metrics": bundle.metrics}

    @app.get("/api/sample/{sample_id}/trajectory")
    def trajectory(sample_id: str):
        bundles = [store.bundle(e) for e in store.epochs()]
        if sample_id not in bundles[0].record_by_id():
            return JSONResponse(status_code=404,
                                content={"error": f"unknown sample {sample_id}"})
        points = sample_trajectory(bundles, sample_id)
        return {"id": sample_id,
                "trajectory": [{"epoch": e, "x": x, "y": y,
                                "predicted": p, "confidence": c}
                               for e, x, y, p, c in points]}

    @app.get("/api/epoch/{epoch}/neighbors")
    def neighbors(epoch: int, x: float, y: float, k: int = 1):
        bundle = _bundle_or_404(epoch)
        if bundle is None:
            return JSONResponse(status_code=404, content={"error": f"unknown epoch {epoch}"})
        if k < 1:
            return JSONResponse(status_code=400, content={"error": "k must be >= 1"})
        coords = np.array([[r.x, r.y] for r in bundle.embeddings])
        d = np.sqrt(((coords - np.array([x, y])) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(d.size), d))[:k]
        return {"neighbors": [
            {**bundle.embeddings[i].to_json(), "distance": float(d[i])}
            for i in map(int, order)]}

    return app


def serve(run_dir, port: int, host: str = "127.0.0.1", ui_dir=None) -> None:
    import uvicorn

    uvicorn.run(create_app(run_dir, ui_dir), host=host, port=port,
                log_level="warning")
