"""Segmentation providers: where probability maps come from.

The servo loop only ever sees the provider interface, so the oracle
(simulator silhouettes), a degraded oracle (blur + noise + checkerboard),
and a remote network segmenter are interchangeable. The remote seam speaks
newline-delimited JSON over TCP with base64 payloads; a reference server is
included so the client can be exercised end to end in tests.
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy.ndimage import gaussian_filter

from .probmap import DimensionMismatch, ProbabilityMap
from .simworld import SimWorld, render_oracle_mask, render_view

WIRE_TIMEOUT_S = 5.0
MAX_LINE_BYTES = 64 * 1024 * 1024


class ProviderError(RuntimeError):
    pass


class ProviderUnavailable(ProviderError):
    """The provider cannot deliver a map (dead endpoint, repeated timeouts)."""


class ProtocolError(ProviderError):
    """The remote endpoint answered, but not in the agreed wire format."""


class SegmentationProvider(Protocol):
    def segment(self, image: np.ndarray, prompt: str) -> ProbabilityMap: ...


# ---------------------------------------------------------------------------
# oracle


class OracleProvider:
    """Perfect segmentation backed by the simulator's surface-id buffer.

    The image argument is accepted for interface parity but ignored; the
    silhouette is rendered from the world's current joint vector.
    """

    def __init__(self, world: SimWorld):
        self._world = world

    def segment(self, image: np.ndarray, prompt: str) -> ProbabilityMap:
        cam = self._world.camera
        if image is not None and image.shape[:2] != (cam.height, cam.width):
            raise DimensionMismatch(
                f"image {image.shape[:2]} vs camera {(cam.height, cam.width)}"
            )
        return render_oracle_mask(self._world, self._world.q, prompt)


# ---------------------------------------------------------------------------
# corruption


@dataclass(frozen=True)
class CorruptionConfig:
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    checkerboard_amplitude: float = 0.0
    checkerboard_period: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("sigmas must be non-negative")
        if not 0.0 <= self.checkerboard_amplitude <= 1.0:
            raise ValueError("checkerboard amplitude must be in [0, 1]")
        if self.checkerboard_period < 1:
            raise ValueError("checkerboard period must be >= 1")


def corrupt_map(
    probmap: ProbabilityMap, config: CorruptionConfig, rng: np.random.Generator
) -> ProbabilityMap:
    """Blur, then additive Gaussian noise, then a signed checkerboard bias,
    then clamp to [0, 1]. The order matters and is fixed."""
    data = probmap.data.astype(np.float64)
    if config.blur_sigma > 0.0:
        data = gaussian_filter(data, sigma=config.blur_sigma, truncate=3.0)
    if config.noise_sigma > 0.0:
        data = data + rng.normal(0.0, config.noise_sigma, size=data.shape)
    if config.checkerboard_amplitude > 0.0:
        h, w = data.shape
        rows = np.arange(h) // config.checkerboard_period
        cols = np.arange(w) // config.checkerboard_period
        parity = (rows[:, None] + cols[None, :]) % 2
        # top-left block is lifted, neighbours are depressed
        sign = np.where(parity == 0, 1.0, -1.0)
        data = data + config.checkerboard_amplitude * sign
    data = np.clip(data, 0.0, 1.0)
    return ProbabilityMap(data.astype(np.float32))


# profile mirroring the artifacts a real segmenter exhibits: soft edges,
# sensor-like noise, and a patterned bias
DEFAULT_CORRUPTION = CorruptionConfig(
    blur_sigma=2.0,
    noise_sigma=0.05,
    checkerboard_amplitude=0.1,
    checkerboard_period=8,
    seed=0,
)


class CorruptedProvider:
    """Wraps another provider and degrades every map it produces.

    Each call derives its own generator from (seed, call index), so a rerun
    of the same session sees the same noise without any shared-state coupling
    between concurrent sessions.
    """

    def __init__(self, base: SegmentationProvider, config: CorruptionConfig):
        self._base = base
        self._config = config
        self._calls = 0

    def segment(self, image: np.ndarray, prompt: str) -> ProbabilityMap:
        clean = self._base.segment(image, prompt)
        rng = np.random.default_rng([self._config.seed, self._calls])
        self._calls += 1
        return corrupt_map(clean, self._config, rng)


# ---------------------------------------------------------------------------
# wire encoding


def encode_image_b64(image: np.ndarray) -> str:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    return base64.b64encode(image.tobytes()).decode("ascii")


def decode_image_b64(payload: str, width: int, height: int) -> np.ndarray:
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    expected = width * height * 3
    if len(raw) != expected:
        raise ProtocolError(f"image payload has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


def encode_probmap_b64(probmap: ProbabilityMap) -> str:
    data = np.ascontiguousarray(probmap.data, dtype="<f4")
    return base64.b64encode(data.tobytes()).decode("ascii")


def decode_probmap_b64(payload: str, width: int, height: int) -> ProbabilityMap:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except Exception as exc:
        raise ProtocolError(f"probmap payload is not valid base64: {exc}") from exc
    expected = width * height * 4
    if len(raw) != expected:
        raise ProtocolError(f"probmap payload has {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4").reshape(height, width)
    try:
        return ProbabilityMap(data.copy())
    except ValueError as exc:
        raise ProtocolError(f"probmap values rejected: {exc}") from exc


# ---------------------------------------------------------------------------
# remote client


class RemoteProvider:
    """TCP client for an external segmenter speaking the line-JSON protocol.

    One request/response pair per call. A timed-out or broken exchange is
    retried once on a fresh connection; a second failure raises
    ProviderUnavailable. Replies that arrive but violate the protocol
    (bad JSON, id mismatch, bad payload) raise ProtocolError immediately.
    """

    def __init__(self, host: str, port: int, timeout_s: float = WIRE_TIMEOUT_S):
        self._host = host
        self._port = port
        self._timeout_s = timeout_s
        self._sock: Optional[socket.socket] = None
        self._reader = None
        self._next_id = 1

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._reader = None

    def _connect(self) -> None:
        if self._sock is not None:
            return
        try:
            sock = socket.create_connection(
                (self._host, self._port), timeout=self._timeout_s
            )
        except OSError as exc:
            raise ProviderUnavailable(
                f"cannot reach segmenter at {self._host}:{self._port}: {exc}"
            ) from exc
        sock.settimeout(self._timeout_s)
        self._sock = sock
        self._reader = sock.makefile("rb")

    def _exchange(self, request: dict) -> dict:
        self._connect()
        line = json.dumps(request, separators=(",", ":")) + "\n"
        self._sock.sendall(line.encode("utf-8"))
        reply = self._reader.readline(MAX_LINE_BYTES)
        if not reply:
            raise OSError("connection closed before reply")
        try:
            doc = json.loads(reply.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"reply is not a JSON line: {exc}") from exc
        if not isinstance(doc, dict):
            raise ProtocolError("reply is not a JSON object")
        return doc

    def segment(self, image: np.ndarray, prompt: str) -> ProbabilityMap:
        image = np.ascontiguousarray(image, dtype=np.uint8)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected an RGB image, got shape {image.shape}")
        height, width = image.shape[:2]
        last_exc: Optional[Exception] = None
        for _ in range(2):  # one retry on transport failure
            request_id = self._next_id
            self._next_id += 1
            request = {
                "id": request_id,
                "width": width,
                "height": height,
                "pixels_b64": encode_image_b64(image),
                "prompt": prompt,
            }
            try:
                doc = self._exchange(request)
            except (OSError, socket.timeout) as exc:
                last_exc = exc
                self.close()
                continue
            for key in ("id", "width", "height", "probmap_b64"):
                if key not in doc:
                    raise ProtocolError(f"reply missing field {key!r}")
            if doc["id"] != request_id:
                raise ProtocolError(
                    f"reply id {doc['id']!r} does not match request id {request_id}"
                )
            if doc["width"] != width or doc["height"] != height:
                raise ProtocolError(
                    f"reply dims {doc['width']}x{doc['height']} "
                    f"do not match request {width}x{height}"
                )
            return decode_probmap_b64(doc["probmap_b64"], width, height)
        raise ProviderUnavailable(
            f"segmenter at {self._host}:{self._port} failed twice: {last_exc}"
        )


# ---------------------------------------------------------------------------
# reference server


class _ProviderHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            line = self.rfile.readline(MAX_LINE_BYTES)
            if not line:
                return
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line.decode("utf-8"))
                width = int(doc["width"])
                height = int(doc["height"])
                image = decode_image_b64(doc["pixels_b64"], width, height)
                probmap = self.server.provider.segment(image, str(doc["prompt"]))
                reply = {
                    "id": doc["id"],
                    "width": probmap.width,
                    "height": probmap.height,
                    "probmap_b64": encode_probmap_b64(probmap),
                }
            except Exception:
                # a reference server never crashes the loop on one bad request
                return
            payload = json.dumps(reply, separators=(",", ":")) + "\n"
            self.wfile.write(payload.encode("utf-8"))
            self.wfile.flush()


class ProviderServer(socketserver.ThreadingTCPServer):
    """Serves any SegmentationProvider over the line-JSON TCP protocol."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, provider: SegmentationProvider, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _ProviderHandler)
        self.provider = provider

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def provider_for_world(
    world: SimWorld,
    kind: str = "oracle",
    corruption: Optional[CorruptionConfig] = None,
    remote_host: Optional[str] = None,
    remote_port: Optional[int] = None,
) -> SegmentationProvider:
    """Factory used by the CLI and service layers."""
    if kind == "oracle":
        return OracleProvider(world)
    if kind == "corrupted":
        return CorruptedProvider(OracleProvider(world), corruption or CorruptionConfig())
    if kind == "remote":
        if remote_host is None or remote_port is None:
            raise ValueError("remote provider needs host and port")
        return RemoteProvider(remote_host, remote_port)
    raise ValueError(f"unknown provider kind {kind!r}")


def current_view(world: SimWorld) -> np.ndarray:
    return render_view(world, world.q)
