"""HTTP API for the annotation and replacement workflow, plus the static UI.

Built on the standard library's threading HTTP server: requests may arrive
concurrently, but every session mutation happens inside one lock, so reads
always see a consistent snapshot and labels apply strictly in queue order.
One process hosts one session.
"""

from __future__ import annotations

import io
import json
import logging
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from PIL import Image

from .annotation import DuplicateLabel, Session
from .dataset_io import Split, diff_image, planar_to_interleaved
from .errors import CompletedSessionError, InvalidLabelError, OutOfOrderError
from .replacement import CandidateOffer, PoolExhausted, ReplacementSession

log = logging.getLogger(__name__)


def encode_png(pixels: bytes) -> bytes:
    """PNG-encode one planar 32x32 RGB image."""
    img = Image.fromarray(planar_to_interleaved(pixels), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class AuditServer:
    """One annotation session (and optionally its replacement phase) over HTTP."""

    def __init__(
        self,
        session: Session,
        train_split: Split,
        test_split: Split,
        replacement: ReplacementSession | None = None,
        replacement_factory=None,
        ui_dir: str | Path | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.session = session
        self.splits = {"train": train_split, "test": test_split}
        self.replacement = replacement
        # called with the completed annotation session once, to start the
        # replacement phase (its targets depend on the recorded labels)
        self.replacement_factory = replacement_factory
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.lock = threading.Lock()
        server = self

        class Handler(_Handler):
            audit = server

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self.httpd.daemon_threads = True

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def serve_forever(self):
        self.httpd.serve_forever()

    def serve_in_thread(self) -> threading.Thread:
        thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        thread.start()
        return thread

    def shutdown(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    # --- JSON payload builders ---------------------------------------------

    def ensure_replacement(self):
        """Start the replacement phase once annotation has completed (call under lock)."""
        if (
            self.replacement is None
            and self.replacement_factory is not None
            and self.session.completed
        ):
            self.replacement = self.replacement_factory(self.session)

    def phase(self) -> str:
        if not self.session.completed:
            return "annotation"
        self.ensure_replacement()
        if self.replacement is not None and not self.replacement.completed:
            return "replacement"
        return "done"

    def class_name(self, index: int) -> str | None:
        names = self.splits["test"].class_names
        return names[index] if names else None

    def progress_payload(self) -> dict:
        s = self.session
        return {
            "counts": s.label_counts(),
            "consecutive_different": s.consecutive_different,
            "stop_threshold": s.stop_threshold,
            "cursor": s.cursor,
            "queue_length": len(s.queue),
            "state": s.state,
        }

    def session_payload(self) -> dict:
        payload = {
            "phase": self.phase(),
            "provenance": {
                "test_features_sha256": self.session.queue.provenance.test_features_sha256,
                "train_features_sha256": self.session.queue.provenance.train_features_sha256,
            },
            **self.progress_payload(),
        }
        if self.replacement is not None:
            r = self.replacement
            payload["replacement"] = {
                "targets": len(r.targets),
                "position": r._target_pos,
                "decisions": len(r.decisions),
                "approved": sum(1 for d in r.decisions if d.approved),
                "exhausted": [
                    {"target_index": e.target_index, "class_index": e.class_index}
                    for e in r.exhausted
                ],
            }
        else:
            payload["replacement"] = None
        return payload

    def next_pair_payload(self) -> dict:
        head = self.session.next_pair()
        if isinstance(head, str):
            return {"status": "session-complete", **self.progress_payload()}
        pair_id = self.session.cursor
        return {
            "status": "ok",
            "pair_id": pair_id,
            "query_index": head.query_index,
            "neighbor_split": head.neighbor_split,
            "neighbor_index": head.neighbor_index,
            "distance": head.distance,
            "test_image_url": f"/api/images/test/{head.query_index}.png",
            "neighbor_image_url": f"/api/images/{head.neighbor_split}/{head.neighbor_index}.png",
            "diff_image_url": f"/api/pairs/{pair_id}/diff.png",
            "progress": self.progress_payload(),
        }

    def next_candidate_payload(self) -> dict:
        assert self.replacement is not None
        result = self.replacement.next_candidate()
        if result is None:
            return {
                "status": "replacement-complete",
                "decisions": len(self.replacement.decisions),
                "exhausted": [
                    {"target_index": e.target_index, "class_index": e.class_index}
                    for e in self.replacement.exhausted
                ],
            }
        if isinstance(result, PoolExhausted):
            return {
                "status": "pool-exhausted",
                "target_index": result.target_index,
                "class_index": result.class_index,
                "class_name": self.class_name(result.class_index),
            }
        assert isinstance(result, CandidateOffer)
        cand = result.candidate
        return {
            "status": "ok",
            "candidate_id": cand.candidate_id,
            "target_index": result.target_index,
            "class_index": cand.fine_label,
            "class_name": self.class_name(cand.fine_label),
            "candidate_image_url": f"/api/images/pool/{cand.candidate_id}.png",
            "target_image_url": f"/api/images/test/{result.target_index}.png",
            "neighbors": [
                {
                    "split": n.split,
                    "index": n.index,
                    "distance": n.distance,
                    "image_url": f"/api/images/{n.split}/{n.index}.png",
                }
                for n in result.neighbors
            ],
        }

    def image_bytes(self, split: str, index: int) -> bytes | None:
        if split == "pool":
            if self.replacement is None or not 0 <= index < len(self.replacement.pool):
                return None
            return encode_png(self.replacement.pool.candidate(index).pixels)
        if split not in self.splits:
            return None
        records = self.splits[split].records
        if not 0 <= index < len(records):
            return None
        return encode_png(records[index].pixels)

    def diff_bytes(self, pair_id: int) -> bytes | None:
        if not 0 <= pair_id < len(self.session.queue):
            return None
        pair = self.session.queue.pairs[pair_id]
        a = self.splits["test"].records[pair.query_index]
        b = self.splits[pair.neighbor_split].records[pair.neighbor_index]
        return encode_png(diff_image(a, b))


_LABEL_RE = re.compile(r"^/api/pairs/(\d+)/label$")
_DIFF_RE = re.compile(r"^/api/pairs/(\d+)/diff\.png$")
_IMAGE_RE = re.compile(r"^/api/images/(train|test|pool)/(\d+)\.png$")
_DECISION_RE = re.compile(r"^/api/candidates/(\d+)/decision$")


class _Handler(BaseHTTPRequestHandler):
    audit: AuditServer  # injected subclass attribute

    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # route through logging, quiet by default
        log.debug("%s %s", self.address_string(), fmt % args)

    # --- plumbing -----------------------------------------------------------

    def send_json(self, payload: dict, status: int = 200):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def send_error_json(self, status: int, code: str, message: str):
        self.send_json({"error": message, "code": code}, status=status)

    def send_binary(self, data: bytes, content_type: str):
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            parsed = json.loads(raw or b"{}")
        except json.JSONDecodeError:
            raise ValueError("request body is not valid JSON")
        if not isinstance(parsed, dict):
            raise ValueError("request body must be a JSON object")
        return parsed

    # --- routing ------------------------------------------------------------

    def do_GET(self):
        audit = self.audit
        path = self.path.split("?", 1)[0]
        try:
            if path == "/api/session":
                with audit.lock:
                    return self.send_json(audit.session_payload())
            if path == "/api/progress":
                with audit.lock:
                    return self.send_json(audit.progress_payload())
            if path == "/api/pairs/next":
                with audit.lock:
                    return self.send_json(audit.next_pair_payload())
            if path == "/api/candidates/next":
                with audit.lock:
                    if not audit.session.completed:
                        return self.send_error_json(
                            409, "annotation-active", "annotation session is still active"
                        )
                    audit.ensure_replacement()
                    if audit.replacement is None:
                        return self.send_error_json(
                            404, "no-replacement-phase", "no candidate pool configured"
                        )
                    return self.send_json(audit.next_candidate_payload())
            m = _DIFF_RE.match(path)
            if m:
                data = audit.diff_bytes(int(m.group(1)))
                if data is None:
                    return self.send_error_json(404, "not-found", "no such pair")
                return self.send_binary(data, "image/png")
            m = _IMAGE_RE.match(path)
            if m:
                data = audit.image_bytes(m.group(1), int(m.group(2)))
                if data is None:
                    return self.send_error_json(404, "not-found", "no such image")
                return self.send_binary(data, "image/png")
            return self.serve_static(path)
        except BrokenPipeError:
            pass
        except Exception as exc:  # surface unexpected failures as JSON, not a dropped socket
            log.exception("GET %s failed", path)
            self.send_error_json(500, "internal-error", str(exc))

    def do_POST(self):
        audit = self.audit
        path = self.path.split("?", 1)[0]
        try:
            m = _LABEL_RE.match(path)
            if m:
                return self.handle_label(int(m.group(1)))
            m = _DECISION_RE.match(path)
            if m:
                return self.handle_decision(int(m.group(1)))
            return self.send_error_json(404, "not-found", f"no POST route {path}")
        except BrokenPipeError:
            pass
        except Exception as exc:
            log.exception("POST %s failed", path)
            self.send_error_json(500, "internal-error", str(exc))

    def handle_label(self, pair_id: int):
        audit = self.audit
        try:
            body = self.read_body()
            label = DuplicateLabel.parse(str(body.get("label", "")))
        except (ValueError, InvalidLabelError) as exc:
            return self.send_error_json(400, "invalid-label", str(exc))
        with audit.lock:
            try:
                record = audit.session.record_label(pair_id, label)
            except OutOfOrderError as exc:
                return self.send_error_json(409, "out-of-order", str(exc))
            except CompletedSessionError as exc:
                return self.send_error_json(410, "completed-session", str(exc))
            return self.send_json(
                {
                    "status": "ok",
                    "recorded": {
                        "pair_id": pair_id,
                        "label": record.label.value,
                        "timestamp": record.timestamp,
                    },
                    "progress": audit.progress_payload(),
                }
            )

    def handle_decision(self, candidate_id: int):
        audit = self.audit
        try:
            body = self.read_body()
        except ValueError as exc:
            return self.send_error_json(400, "bad-request", str(exc))
        if "approved" not in body or not isinstance(body["approved"], bool):
            return self.send_error_json(400, "bad-request", "body must carry boolean 'approved'")
        with audit.lock:
            if not audit.session.completed:
                return self.send_error_json(409, "annotation-active", "annotation session is still active")
            audit.ensure_replacement()
            if audit.replacement is None:
                return self.send_error_json(404, "no-replacement-phase", "no candidate pool configured")
            try:
                decision = audit.replacement.decide(candidate_id, body["approved"])
            except Exception as exc:
                return self.send_error_json(409, "conflict", str(exc))
            return self.send_json(
                {
                    "status": "ok",
                    "candidate_id": decision.candidate_id,
                    "target_index": decision.target_index,
                    "approved": decision.approved,
                }
            )

    def serve_static(self, path: str):
        ui_dir = self.audit.ui_dir
        if ui_dir is None:
            if path == "/":
                return self.send_json({"service": "dupaudit", "ui": "not bundled; API only"})
            return self.send_error_json(404, "not-found", f"no route {path}")
        rel = "index.html" if path == "/" else path.lstrip("/")
        target = (ui_dir / rel).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            return self.send_error_json(404, "not-found", f"no route {path}")
        content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_binary(target.read_bytes(), content_type)
