"""HTTP session server for the interactive rectification workflow.

The protocol enforces the stream's sequential semantics: each session
has at most one step pending, presented by GET .../next and completed
by POST .../rectify or .../skip. All JSON; masks travel as base64 PNG
(8-bit, 0/255). Rectify responses carry a sha256 of the decoded 0/1
raster so clients can verify the server saw exactly their edit.
"""

from __future__ import annotations

import hashlib
import json
import mimetypes
import os
import threading
import uuid
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .data import generate_synthetic, load_folder, render_report, SyntheticConfig
from .engine import Engine, EngineConfig, ExpertPolicy, PendingStep
from .errors import StreamSegError
from .generalist import MockGeneralist, MockGeneralistConfig, RemoteGeneralist
from .geometry import BOX, POINT, binarize
from .pngio import b64_to_mask, gray_to_b64, mask_to_b64

RECORDS_TAIL = 10

PROMPT_KINDS = {"box": (BOX,), "point": (POINT,), "both": (BOX, POINT)}

ENGINE_JSON_FIELDS = {
    "k": ("k", int),
    "K": ("window", int),
    "grid_points": ("grid_points", int),
    "lr": ("lr", float),
    "update_mode": ("update_mode", str),
    "fusion_mode": ("fusion_mode", str),
    "fixed_alpha": ("fixed_alpha", float),
    "refine_input": ("refine_input", bool),
    "seed": ("seed", int),
    "patch_size": ("patch_size", int),
}


class BadRequest(ValueError):
    pass


def _engine_config_from_json(body: dict) -> EngineConfig:
    fields: dict = {"expert_policy": ExpertPolicy("interactive")}
    for key, value in (body.get("config") or {}).items():
        if key not in ENGINE_JSON_FIELDS:
            raise BadRequest(f"unknown config key {key!r}")
        name, caster = ENGINE_JSON_FIELDS[key]
        try:
            fields[name] = caster(value)
        except (TypeError, ValueError) as exc:
            raise BadRequest(f"config.{key}: {exc}") from exc
    try:
        return EngineConfig(**fields)
    except ValueError as exc:
        raise BadRequest(str(exc)) from exc


def _samples_from_json(body: dict):
    data = body.get("data") or {"kind": "synthetic"}
    kind = data.get("kind", "synthetic")
    prompt = data.get("prompt", "box")
    if prompt not in PROMPT_KINDS:
        raise BadRequest(f"data.prompt must be box|point|both, got {prompt!r}")
    if kind == "synthetic":
        try:
            cfg = SyntheticConfig(
                seed=int(data.get("seed", 0)),
                count=int(data.get("count", 20)),
                image_size=int(data.get("image_size", 128)),
            )
        except (TypeError, ValueError) as exc:
            raise BadRequest(f"data: {exc}") from exc
        return generate_synthetic(cfg, prompt_kinds=PROMPT_KINDS[prompt])
    if kind == "folder":
        path = data.get("path")
        if not path:
            raise BadRequest("data.path required for folder datasets")
        return load_folder(path, prompt_kinds=PROMPT_KINDS[prompt])
    raise BadRequest(f"data.kind must be synthetic|folder, got {kind!r}")


def _generalist_from_json(body: dict, samples, engine_seed: int):
    spec = body.get("generalist") or {"kind": "mock"}
    kind = spec.get("kind", "mock")
    if kind == "mock":
        cfg = MockGeneralistConfig(
            seed=int(spec.get("seed", engine_seed)),
            box_corruption=float(spec.get("box_corruption", MockGeneralistConfig.box_corruption)),
            point_corruption=float(
                spec.get("point_corruption", MockGeneralistConfig.point_corruption)
            ),
        )
        return MockGeneralist(cfg, {s.sample_id: s.gt_mask for s in samples})
    if kind == "remote":
        url = spec.get("url")
        if not url:
            raise BadRequest("generalist.url required for remote")
        return RemoteGeneralist(url, timeout=float(spec.get("timeout", 30.0)))
    raise BadRequest(f"generalist.kind must be mock|remote, got {kind!r}")


def mask_digest(mask: np.ndarray) -> str:
    """sha256 over the row-major 0/1 uint8 raster."""
    return hashlib.sha256(
        np.where(np.asarray(mask, dtype=bool), 1, 0).astype(np.uint8).tobytes()
    ).hexdigest()


@dataclass
class Session:
    session_id: str
    engine: Engine
    queue: list  # flattened (sample, prompt) pairs in stream order
    cursor: int = 0
    pending: PendingStep | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def alpha_current(self) -> float:
        if self.engine.cfg.fusion_mode == "adaptive":
            return self.engine.tracker.value()
        return self.engine.cfg.fixed_alpha


class SessionManager:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, body: dict) -> Session:
        cfg = _engine_config_from_json(body)
        samples = _samples_from_json(body)
        generalist = _generalist_from_json(body, samples, cfg.seed)
        queue = [(s, p) for s in samples for p in s.prompts]
        if not queue:
            raise BadRequest("dataset yields no (sample, prompt) pairs")
        session = Session(
            session_id=uuid.uuid4().hex[:12],
            engine=Engine(cfg, generalist),
            queue=queue,
        )
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)


def _next_payload(session: Session) -> dict:
    sample, prompt = session.queue[session.cursor]
    pending = session.engine.step_infer(sample.image, prompt, sample.sample_id, sample.gt_mask)
    session.pending = pending
    session.cursor += 1
    if prompt.kind == BOX:
        b = prompt.box
        prompt_json = {"kind": "box", "box": [b.row0, b.col0, b.row1, b.col1], "point": None}
    else:
        prompt_json = {"kind": "point", "box": None, "point": list(prompt.point)}
    return {
        "step": session.engine.step_index,
        "sample_id": sample.sample_id,
        "prompt": prompt_json,
        "image_b64": gray_to_b64(sample.image),
        "fused_mask_b64": mask_to_b64(pending.fused_mask),
        "generalist_mask_b64": mask_to_b64(binarize(pending.generalist_logits)),
        "aux_mask_b64": mask_to_b64(binarize(pending.aux_logits)),
        "alpha_used": pending.alpha_used,
        "dsc_available": False,
    }


class _Handler(BaseHTTPRequestHandler):
    manager: SessionManager = None
    static_dir: str | None = None

    # -- plumbing -----------------------------------------------------------

    def log_message(self, *args):
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _send_error_json(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    def _send_empty(self, status: int) -> None:
        self.send_response(status)
        self.send_header("Content-Length", "0")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BadRequest(f"invalid JSON body: {exc}") from exc

    def _session_or_404(self, session_id: str) -> Session | None:
        session = self.manager.get(session_id)
        if session is None:
            self._send_error_json(404, f"unknown session {session_id!r}")
        return session

    # -- routing ------------------------------------------------------------

    def do_GET(self):
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        try:
            if len(parts) == 3 and parts[0] == "session":
                session = self._session_or_404(parts[1])
                if session is None:
                    return
                if parts[2] == "next":
                    return self._handle_next(session)
                if parts[2] == "state":
                    return self._handle_state(session)
                if parts[2] == "report":
                    return self._handle_report(session)
            if self.static_dir is not None:
                return self._handle_static(parts)
            self._send_error_json(404, f"no route for GET {self.path}")
        except StreamSegError as exc:
            self._send_error_json(502, str(exc))

    def do_POST(self):
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        try:
            if parts == ["session"]:
                return self._handle_create()
            if len(parts) == 3 and parts[0] == "session":
                session = self._session_or_404(parts[1])
                if session is None:
                    return
                if parts[2] == "rectify":
                    return self._handle_rectify(session)
                if parts[2] == "skip":
                    return self._handle_skip(session)
            self._send_error_json(404, f"no route for POST {self.path}")
        except BadRequest as exc:
            self._send_error_json(400, str(exc))
        except StreamSegError as exc:
            self._send_error_json(400, str(exc))

    # -- handlers -----------------------------------------------------------

    def _handle_create(self):
        body = self._read_body()
        try:
            session = self.manager.create(body)
        except (BadRequest, StreamSegError, OSError) as exc:
            return self._send_error_json(400, str(exc))
        self._send_json(201, {"session_id": session.session_id})

    def _handle_next(self, session: Session):
        with session.lock:
            if session.pending is not None:
                return self._send_error_json(409, "a step is already pending")
            if session.cursor >= len(session.queue):
                return self._send_empty(204)
            payload = _next_payload(session)
        self._send_json(200, payload)

    def _handle_rectify(self, session: Session):
        body = self._read_body()
        mask_b64 = body.get("mask_b64")
        if not mask_b64:
            raise BadRequest("mask_b64 required")
        try:
            mask = b64_to_mask(mask_b64)
        except Exception as exc:
            raise BadRequest(f"undecodable mask: {exc}") from exc
        with session.lock:
            if session.pending is None:
                return self._send_error_json(409, "no pending step")
            if mask.shape != session.pending.image.shape:
                raise BadRequest(
                    f"mask {mask.shape} does not match image {session.pending.image.shape}"
                )
            record = session.engine.step_finalize(session.pending, mask)
            session.pending = None
        self._send_json(200, {"record": asdict(record), "mask_sha256": mask_digest(mask)})

    def _handle_skip(self, session: Session):
        with session.lock:
            if session.pending is None:
                return self._send_error_json(409, "no pending step")
            record = session.engine.step_finalize(session.pending, None)
            session.pending = None
        self._send_json(200, {"record": asdict(record)})

    def _handle_state(self, session: Session):
        with session.lock:
            payload = {
                "step_count": session.engine.step_index,
                "batch_len": len(session.engine.batch),
                "alpha_current": session.alpha_current(),
                "param_checksum": session.engine.param_checksum(),
                "records_tail": [asdict(r) for r in session.engine.records[-RECORDS_TAIL:]],
            }
        self._send_json(200, payload)

    def _handle_report(self, session: Session):
        with session.lock:
            text = render_report(session.engine.records)
        data = text.encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "text/csv; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _handle_static(self, parts: list[str]):
        rel = "index.html" if not parts else "/".join(parts)
        root = os.path.realpath(self.static_dir)
        full = os.path.realpath(os.path.join(root, rel))
        if not full.startswith(root + os.sep) and full != root:
            return self._send_error_json(404, "not found")
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            return self._send_error_json(404, f"no such asset {rel!r}")
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as f:
            data = f.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def create_server(host: str = "127.0.0.1", port: int = 0, static_dir: str | None = None):
    """ThreadingHTTPServer with a fresh session manager; port 0 picks an
    ephemeral port (see server.server_address)."""
    handler = type(
        "SessionHandler",
        (_Handler,),
        {"manager": SessionManager(), "static_dir": static_dir},
    )
    return ThreadingHTTPServer((host, port), handler)
