"""HTTP facade over one simulated world: frames, masks, and servo sessions.

Built on the stdlib threading HTTP server. The world is mutated only by the
single live session thread; every read endpoint serves a snapshot taken at
request time. Telemetry is a chunked NDJSON stream: new subscribers first
replay the session's full history, then follow live lines through a bounded
per-subscriber queue that drops oldest entries rather than ever blocking
the servo loop (each line carries that subscriber's cumulative drop count).
"""

from __future__ import annotations

import json
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import List, Optional, Tuple
from urllib.parse import parse_qs, urlparse

from .geometry import ConstraintKind
from .harness import (
    SessionConfig,
    SessionOutcome,
    SessionResult,
    resolve_provider,
    run_session,
)
from .probmap import encode_pfm
from .simworld import SimWorld, encode_ppm, load_scene, render_view, scene_to_dict

TELEMETRY_QUEUE_SIZE = 256
MAX_ATTEMPT_COUNTER = 3

_END = object()  # sentinel closing subscriber queues

_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
    ".png": "image/png",
}


class _Subscriber:
    def __init__(self):
        self.queue: "queue.Queue" = queue.Queue(maxsize=TELEMETRY_QUEUE_SIZE)
        self.dropped = 0
        self.lock = threading.Lock()

    def push(self, item) -> None:
        with self.lock:
            try:
                self.queue.put_nowait(item)
            except queue.Full:
                try:
                    self.queue.get_nowait()
                    self.dropped += 1
                except queue.Empty:
                    pass
                self.queue.put_nowait(item)


class SessionHandle:
    """Server-side view of one servo session and its telemetry fan-out."""

    def __init__(self, session_id: str, prompt: str, kinds, provider_spec: str, attempt: int):
        self.session_id = session_id
        self.prompt = prompt
        self.kinds = kinds
        self.provider_spec = provider_spec
        self.attempt = attempt
        self.abort_event = threading.Event()
        self.lock = threading.Lock()
        self.history: List[dict] = []
        self.subscribers: List[_Subscriber] = []
        self.done = threading.Event()
        self.result: Optional[SessionResult] = None
        self.error: Optional[str] = None
        self.thread: Optional[threading.Thread] = None

    def publish(self, line: dict) -> None:
        with self.lock:
            self.history.append(line)
            subscribers = list(self.subscribers)
        for sub in subscribers:
            sub.push(line)

    def finish(self, result: Optional[SessionResult], error: Optional[str] = None) -> None:
        self.result = result
        self.error = error
        terminal = {"event": "end", "attempt": self.attempt}
        if result is not None:
            terminal.update(
                outcome=result.outcome.value,
                steps=result.steps,
                grasp_success=result.grasp_success,
                final_error_norm=result.final_error_norm,
            )
        if error is not None:
            terminal["error"] = error
        self.publish(terminal)
        with self.lock:
            self.done.set()
            subscribers = list(self.subscribers)
        for sub in subscribers:
            sub.push(_END)

    def subscribe(self) -> Tuple[List[dict], Optional[_Subscriber]]:
        with self.lock:
            backlog = list(self.history)
            if self.done.is_set():
                return backlog, None
            sub = _Subscriber()
            self.subscribers.append(sub)
            return backlog, sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        with self.lock:
            if sub in self.subscribers:
                self.subscribers.remove(sub)

    @property
    def status(self) -> str:
        if not self.done.is_set():
            return "Running"
        if self.error is not None:
            return "Error"
        return self.result.outcome.value

    def snapshot(self) -> dict:
        doc = {
            "session_id": self.session_id,
            "prompt": self.prompt,
            "kinds": [k.value for k in self.kinds],
            "provider": self.provider_spec,
            "attempt": self.attempt,
            "status": self.status,
            "running": not self.done.is_set(),
            "steps": len([l for l in self.history if "step" in l]),
        }
        if self.result is not None:
            doc.update(
                outcome=self.result.outcome.value,
                grasp_success=self.result.grasp_success,
                final_error_norm=self.result.final_error_norm,
            )
        if self.error is not None:
            doc["error"] = self.error
        return doc


class ServoService:
    """One world, many HTTP clients, at most one live session."""

    def __init__(
        self,
        scene,
        cfg: Optional[SessionConfig] = None,
        host: str = "127.0.0.1",
        port: int = 0,
        static_dir: Optional[Path] = None,
    ):
        self.world: SimWorld = scene if isinstance(scene, SimWorld) else load_scene(scene)
        self._initial_q = self.world.q.copy()
        self.scene_dict = scene_to_dict(self.world)
        self.cfg = cfg or SessionConfig()
        self.static_dir = Path(static_dir) if static_dir else None
        self.lock = threading.Lock()
        self.sessions: dict = {}
        self.active: Optional[SessionHandle] = None
        self._next_id = 1
        self._attempt_key: Optional[tuple] = None
        self._attempt_count = 0
        handler = type("_BoundHandler", (_Handler,), {"service": self})
        self.server = ThreadingHTTPServer((host, port), handler)

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        thread.start()
        return thread

    def shutdown(self) -> None:
        with self.lock:
            active = self.active
        if active is not None:
            active.abort_event.set()
            if active.thread is not None:
                active.thread.join(timeout=10.0)
        self.server.shutdown()
        self.server.server_close()

    # -- session management

    def start_session(self, prompt: str, kinds, provider_spec: str, reset: bool) -> SessionHandle:
        with self.lock:
            if self.active is not None and not self.active.done.is_set():
                raise _Conflict("a session is already running")
            key = (prompt, tuple(k.value for k in kinds))
            if key == self._attempt_key and self._attempt_count < MAX_ATTEMPT_COUNTER:
                self._attempt_count += 1
            else:
                self._attempt_key = key
                self._attempt_count = 1
            session_id = f"s{self._next_id}"
            self._next_id += 1
            handle = SessionHandle(session_id, prompt, kinds, provider_spec, self._attempt_count)
            self.sessions[session_id] = handle
            self.active = handle
        if reset:
            self.world.q = self._initial_q.copy()
        handle.thread = threading.Thread(target=self._drive, args=(handle,), daemon=True)
        handle.thread.start()
        return handle

    def _drive(self, handle: SessionHandle) -> None:
        def on_step(trace_step, overlay, state):
            line = json.loads(trace_step.to_json())
            line["overlay"] = overlay
            handle.publish(line)

        try:
            result = run_session(
                self.world,
                handle.prompt,
                handle.kinds,
                handle.provider_spec,
                self.cfg,
                abort_event=handle.abort_event,
                on_step=on_step,
            )
            if result.grasp_success:
                with self.lock:
                    self._attempt_key = None  # task done; next session starts fresh
                    self._attempt_count = 0
            handle.finish(result)
        except Exception as exc:  # session errors surface in telemetry, not logs
            handle.finish(None, error=f"{type(exc).__name__}: {exc}")


class _Conflict(RuntimeError):
    pass


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    service: ServoService  # bound by ServoService

    # -- plumbing

    def log_message(self, fmt, *args):  # tests stay quiet
        pass

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _reply(self, code: int, body: bytes, content_type: str) -> None:
        self.send_response(code)
        self._cors()
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, doc: dict) -> None:
        self._reply(code, json.dumps(doc).encode("utf-8"), "application/json")

    def _error(self, code: int, message: str) -> None:
        self._json(code, {"error": message})

    def _read_body(self) -> Optional[dict]:
        length = int(self.headers.get("Content-Length", "0") or "0")
        raw = self.rfile.read(length) if length else b"{}"
        try:
            doc = json.loads(raw.decode("utf-8")) if raw else {}
        except (UnicodeDecodeError, json.JSONDecodeError):
            return None
        return doc if isinstance(doc, dict) else None

    # -- verbs

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if url.path == "/scene":
                self._json(200, self.service.scene_dict)
            elif url.path == "/view":
                rgb = render_view(self.service.world, self.service.world.q.copy())
                self._reply(200, encode_ppm(rgb), "image/x-portable-pixmap")
            elif url.path == "/mask":
                self._get_mask(url)
            elif len(parts) == 2 and parts[0] == "session":
                handle = self.service.sessions.get(parts[1])
                if handle is None:
                    self._error(404, f"unknown session {parts[1]!r}")
                else:
                    self._json(200, handle.snapshot())
            elif len(parts) == 3 and parts[0] == "session" and parts[2] == "telemetry":
                self._get_telemetry(parts[1])
            elif self.service.static_dir is not None and (
                parts[:1] == ["console"] or url.path == "/"
            ):
                self._get_static(parts[1:] if parts[:1] == ["console"] else [])
            else:
                self._error(404, f"no route for {url.path}")
        except BrokenPipeError:
            pass

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        if url.path == "/session":
            self._post_session()
        elif len(parts) == 3 and parts[0] == "session" and parts[2] == "abort":
            handle = self.service.sessions.get(parts[1])
            if handle is None:
                self._error(404, f"unknown session {parts[1]!r}")
            else:
                handle.abort_event.set()
                self._json(200, {"session_id": handle.session_id, "status": handle.status})
        else:
            self._error(404, f"no route for {url.path}")

    # -- endpoint bodies

    def _get_mask(self, url) -> None:
        params = parse_qs(url.query)
        prompts = params.get("prompt", [])
        if not prompts or not prompts[0].strip():
            self._error(400, "missing prompt query parameter")
            return
        provider_spec = params.get("provider", ["oracle"])[0]
        try:
            provider = resolve_provider(provider_spec, self.service.world, self.service.cfg)
        except ValueError as exc:
            self._error(400, str(exc))
            return
        image = render_view(self.service.world, self.service.world.q.copy())
        probmap = provider.segment(image, prompts[0])
        self._reply(200, encode_pfm(probmap), "image/x-portable-floatmap")

    def _post_session(self) -> None:
        doc = self._read_body()
        if doc is None:
            self._error(400, "body must be a JSON object")
            return
        prompt = doc.get("prompt", "")
        if not isinstance(prompt, str) or not prompt.strip():
            self._error(400, "prompt must be a non-empty string")
            return
        kinds_raw = doc.get("kinds")
        if not isinstance(kinds_raw, list) or not kinds_raw:
            self._error(400, "kinds must be a non-empty list")
            return
        try:
            kinds = tuple(ConstraintKind.parse(k) for k in kinds_raw)
        except Exception as exc:
            self._error(400, f"malformed kinds: {exc}")
            return
        provider_spec = doc.get("provider", "oracle")
        if not isinstance(provider_spec, str):
            self._error(400, "provider must be a string")
            return
        try:
            resolve_provider(provider_spec, self.service.world, self.service.cfg)
        except ValueError as exc:
            self._error(400, str(exc))
            return
        reset = bool(doc.get("reset", False))
        extra = set(doc) - {"prompt", "kinds", "provider", "reset"}
        if extra:
            self._error(400, f"unknown fields {sorted(extra)}")
            return
        try:
            handle = self.service.start_session(prompt, kinds, provider_spec, reset)
        except _Conflict as exc:
            self._error(409, str(exc))
            return
        self._json(200, {"session_id": handle.session_id})

    def _get_telemetry(self, session_id: str) -> None:
        handle = self.service.sessions.get(session_id)
        if handle is None:
            self._error(404, f"unknown session {session_id!r}")
            return
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Transfer-Encoding", "chunked")
        self.send_header("Cache-Control", "no-store")
        self.end_headers()
        backlog, sub = handle.subscribe()
        try:
            dropped = 0 if sub is None else sub.dropped
            for line in backlog:
                self._write_chunk(line, dropped)
            if sub is not None:
                while True:
                    try:
                        item = sub.queue.get(timeout=0.5)
                    except queue.Empty:
                        if handle.done.is_set():
                            break
                        continue
                    if item is _END:
                        break
                    self._write_chunk(item, sub.dropped)
            self.wfile.write(b"0\r\n\r\n")
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            if sub is not None:
                handle.unsubscribe(sub)

    def _write_chunk(self, line: dict, dropped: int) -> None:
        payload = (json.dumps({**line, "dropped": dropped}) + "\n").encode("utf-8")
        self.wfile.write(f"{len(payload):x}\r\n".encode("ascii") + payload + b"\r\n")
        self.wfile.flush()

    def _get_static(self, rel_parts: List[str]) -> None:
        rel = "/".join(rel_parts) or "index.html"
        root = self.service.static_dir.resolve()
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            self._error(404, f"no such file {rel!r}")
            return
        ctype = _STATIC_TYPES.get(target.suffix, "application/octet-stream")
        self._reply(200, target.read_bytes(), ctype)
