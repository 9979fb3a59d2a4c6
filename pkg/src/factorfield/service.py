"""HTTP render service: GET /info for model metadata, POST /render for PNGs.

The model is read-only after startup, so concurrent requests are safe; a
threading HTTP server handles them without locking.
"""

from __future__ import annotations

import io
import json
import threading
import time
from dataclasses import dataclass, field as dc_field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .dataset import pose_from_azel
from .decoder import DecoderPair
from .field import FactorizedField, ParameterRangeError
from .render import Camera, RenderConfig, render_image


class RequestError(ValueError):
    """Maps to a 400 response naming the violated precondition."""


@dataclass
class ModelService:
    field: FactorizedField
    decoders: DecoderPair
    meta: dict = dc_field(default_factory=dict)
    max_size: int = 1024
    default_samples: int = 128
    default_radius: float = 3.0

    def info(self) -> dict:
        names = self.meta.get("param_names") or [f"p{i}" for i in range(self.field.param_dims)]
        return {
            "k": self.field.param_dims,
            "params": [
                {"name": names[i], "lo": lo, "hi": hi}
                for i, (lo, hi) in enumerate(self.field.param_ranges)
            ],
            "training_resolution": [
                int(self.meta.get("width", 0)), int(self.meta.get("height", 0))
            ],
            "grid_resolution": [int(n) for n in self.field.density.resolution],
            "aabb": self.field.aabb.to_dict(),
            "max_size": self.max_size,
        }

    def _pose_from_request(self, req: dict) -> np.ndarray:
        if "pose" in req:
            pose = np.asarray(req["pose"], dtype=np.float64)
            if pose.shape != (4, 4):
                raise RequestError("pose must be a 4x4 matrix")
            return pose
        if "azimuth" in req and "elevation" in req:
            az = float(req["azimuth"])
            el = float(req["elevation"])
            if not -90.0 <= el <= 90.0:
                raise RequestError("elevation must be in [-90, 90]")
            radius = float(req.get("radius", self.default_radius))
            if radius <= 0:
                raise RequestError("radius must be positive")
            return pose_from_azel(az, el, radius, look_at=self.field.aabb.center)
        raise RequestError("request needs either 'pose' or 'azimuth'+'elevation'")

    def render_png(self, req: dict) -> bytes:
        if not isinstance(req, dict):
            raise RequestError("request body must be a JSON object")
        width = int(req.get("width", 256))
        height = int(req.get("height", 256))
        if not (0 < width <= self.max_size and 0 < height <= self.max_size):
            raise RequestError(f"width/height must be in (0, {self.max_size}]")
        params = np.asarray(req.get("params", []), dtype=np.float64).reshape(-1)
        if params.shape[0] != self.field.param_dims:
            raise RequestError(f"expected {self.field.param_dims} params, got {params.shape[0]}")
        for i, (lo, hi) in enumerate(self.field.param_ranges):
            if not lo <= params[i] <= hi:
                raise RequestError(
                    f"param {i} value {params[i]} outside declared range [{lo}, {hi}]")
        pose = self._pose_from_request(req)
        focal_frac = float(self.meta.get("focal", 0)) / float(self.meta.get("width", 1)) \
            if self.meta.get("focal") and self.meta.get("width") else 1.0723
        camera = Camera(pose, focal_frac * width, width, height)
        samples = int(req.get("samples", self.default_samples))
        if samples < 2:
            raise RequestError("samples must be >= 2")
        config = RenderConfig(
            n_samples=samples,
            background=tuple(self.meta.get("background", (1.0, 1.0, 1.0))),
            jitter=False,
        )
        img = render_image(self.field, self.decoders, camera, params, config)
        buf = io.BytesIO()
        Image.fromarray(np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8), "RGB") \
            .save(buf, format="PNG")
        return buf.getvalue()


def make_server(service: ModelService, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    """Build (without starting) the HTTP server; port 0 picks a free port."""

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, code: int, body: bytes, content_type: str) -> None:
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, code: int, obj: dict) -> None:
            self._send(code, json.dumps(obj).encode("utf-8"), "application/json")

        def do_GET(self):
            if self.path.rstrip("/") in ("", "/info"):
                self._send_json(200, service.info())
            else:
                self._send_json(404, {"error": f"unknown path {self.path}"})

        def do_POST(self):
            if self.path.rstrip("/") != "/render":
                self._send_json(404, {"error": f"unknown path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                try:
                    req = json.loads(self.rfile.read(length).decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    raise RequestError(f"malformed JSON body: {exc}") from exc
                t0 = time.time()
                png = service.render_png(req)
                print(f"[serve] /render {len(png)}B in {time.time() - t0:.2f}s", flush=True)
                self._send(200, png, "image/png")
            except (RequestError, ParameterRangeError) as exc:
                self._send_json(400, {"error": str(exc)})
            except Exception as exc:  # pragma: no cover - defensive
                self._send_json(500, {"error": f"internal error: {exc}"})

    return ThreadingHTTPServer((host, port), Handler)


def serve_forever(service: ModelService, host: str, port: int) -> None:
    server = make_server(service, host, port)
    print(f"[serve] listening on http://{host}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def start_background(service: ModelService, host: str = "127.0.0.1", port: int = 0):
    """Server on a daemon thread; returns (server, base_url).  Test helper."""
    server = make_server(service, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://{host}:{server.server_address[1]}"
