"""HTTP annotation-collection server.

Serves the rating UI bundle and a small JSON API; every accepted submission
is appended to a JSONL log and fsynced before the acknowledgment goes out, so
the log stays parseable even after a crash mid-run.  All writes go through a
single lock; sessions are independent.
"""
from __future__ import annotations

import json
import mimetypes
import os
import threading
import urllib.parse
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from random import Random

from .dataset import (DEFAULT_VOCABULARIES, Dataset, FACTOR_QUESTIONS)
from .study import PERSPECTIVES

_FALLBACK_PAGE = b"""<!doctype html>
<html><head><meta charset="utf-8"><title>rating interface</title></head>
<body><p>No UI bundle is installed. The JSON API under /api is live.</p></body></html>
"""


@dataclass
class SessionState:
    session_id: str
    subject_id: str
    items: list[str]            # image ids in randomized presentation order
    seed: int
    cursor: int = 0
    submitted: dict[int, dict] = field(default_factory=dict)  # latest wins


class AnnotationServer:
    def __init__(self, ds: Dataset, out_path, static_dir=None, seed: int = 0):
        self.ds = ds
        self.out_path = Path(out_path)
        self.static_dir = Path(static_dir) if static_dir else None
        self.seed = seed
        self._sessions: dict[str, SessionState] = {}
        self._session_lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._counter = 0
        self.out_path.parent.mkdir(parents=True, exist_ok=True)
        self.out_path.touch(exist_ok=True)

    # -- session management -------------------------------------------------
    def create_session(self, subject_id: str) -> SessionState:
        with self._session_lock:
            self._counter += 1
            sid = f"s{self._counter:06d}"
            session_seed = self.seed + self._counter
            items = sorted(self.ds.images)
            Random(session_seed).shuffle(items)
            state = SessionState(session_id=sid, subject_id=subject_id,
                                 items=items, seed=session_seed)
            self._sessions[sid] = state
            return state

    def get_session(self, sid: str) -> SessionState | None:
        with self._session_lock:
            return self._sessions.get(sid)

    # -- payloads -----------------------------------------------------------
    def item_payload(self, state: SessionState, index: int) -> dict:
        image_id = state.items[index]
        rec = self.ds.images[image_id]
        prompt = self.ds.prompts[rec.prompt_id]
        questions = [{"id": factor,
                      "text": FACTOR_QUESTIONS[factor],
                      "options": list(self.ds.vocabularies.get(
                          factor, DEFAULT_VOCABULARIES[factor]))}
                     for factor in DEFAULT_VOCABULARIES]
        return {
            "image_id": image_id,
            "image_url": f"/images/{rec.file_path}",
            "prompt_text": prompt.raw_text,
            "perspectives": list(PERSPECTIVES),
            "questions": questions,
            "index": index,
            "n_items": len(state.items),
        }

    def validate_rating(self, body: dict) -> dict[str, str]:
        errors: dict[str, str] = {}
        scores = body.get("scores")
        if not isinstance(scores, dict):
            errors["scores"] = "missing scores object"
        else:
            for persp in PERSPECTIVES:
                value = scores.get(persp)
                if not isinstance(value, (int, float)):
                    errors[f"scores.{persp}"] = "missing or non-numeric"
                elif not (0.0 <= float(value) <= 5.0):
                    errors[f"scores.{persp}"] = f"{value} out of [0,5]"
            for extra in set(scores) - set(PERSPECTIVES):
                errors[f"scores.{extra}"] = "unknown perspective"
        choices = body.get("choices")
        if not isinstance(choices, dict):
            errors["choices"] = "missing choices object"
        else:
            for factor, vocab in self.ds.vocabularies.items():
                value = choices.get(factor)
                if value is None:
                    errors[f"choices.{factor}"] = "missing"
                elif value not in vocab:
                    errors[f"choices.{factor}"] = f"{value!r} not in vocabulary"
        if not isinstance(body.get("explanation", ""), str):
            errors["explanation"] = "must be a string"
        return errors

    def append_submission(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True) + "\n"
        with self._write_lock:
            with open(self.out_path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    # -- server lifecycle ---------------------------------------------------
    def make_http_server(self, bind: str = "127.0.0.1", port: int = 0
                         ) -> ThreadingHTTPServer:
        server = ThreadingHTTPServer((bind, port), _make_handler(self))
        return server


def _make_handler(app: AnnotationServer):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet
            pass

        def _json(self, status: int, payload: dict):
            body = json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _file(self, path: Path):
            if not path.is_file():
                self._json(404, {"error": "not found"})
                return
            ctype = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
            data = path.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            parsed = urllib.parse.urlparse(self.path)
            parts = [p for p in parsed.path.split("/") if p]
            if parsed.path == "/api/session" or parsed.path == "/api/session/":
                qs = urllib.parse.parse_qs(parsed.query)
                subject = qs.get("subject_id", [""])[0]
                if not subject:
                    self._json(400, {"error": "subject_id required"})
                    return
                state = app.create_session(subject)
                self._json(200, {"session_id": state.session_id,
                                 "n_items": len(state.items),
                                 "seed": state.seed})
                return
            if len(parts) == 5 and parts[0] == "api" and parts[1] == "session" \
                    and parts[3] == "item":
                state = app.get_session(parts[2])
                if state is None:
                    self._json(404, {"error": "unknown session"})
                    return
                try:
                    index = int(parts[4])
                except ValueError:
                    self._json(400, {"error": "bad item index"})
                    return
                if not (0 <= index < len(state.items)):
                    self._json(404, {"error": "item index out of range"})
                    return
                self._json(200, app.item_payload(state, index))
                return
            if parsed.path == "/api/export":
                data = app.out_path.read_bytes()
                self.send_response(200)
                self.send_header("Content-Type", "application/jsonl")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                return
            if parts and parts[0] == "images":
                rel = "/".join(parts[1:])
                target = (app.ds.root / rel).resolve()
                if app.ds.root.resolve() not in target.parents \
                        and target != app.ds.root.resolve():
                    self._json(403, {"error": "forbidden"})
                    return
                self._file(target)
                return
            if parts and parts[0] == "static":
                if app.static_dir is None:
                    self._json(404, {"error": "no UI bundle installed"})
                    return
                rel = "/".join(parts[1:]) or "index.html"
                target = (app.static_dir / rel).resolve()
                if app.static_dir.resolve() not in target.parents \
                        and target != app.static_dir.resolve():
                    self._json(403, {"error": "forbidden"})
                    return
                self._file(target)
                return
            if parsed.path == "/":
                if app.static_dir is not None and (app.static_dir / "index.html").is_file():
                    self._file(app.static_dir / "index.html")
                else:
                    self.send_response(200)
                    self.send_header("Content-Type", "text/html")
                    self.send_header("Content-Length", str(len(_FALLBACK_PAGE)))
                    self.end_headers()
                    self.wfile.write(_FALLBACK_PAGE)
                return
            self._json(404, {"error": "not found"})

        def do_POST(self):
            parsed = urllib.parse.urlparse(self.path)
            parts = [p for p in parsed.path.split("/") if p]
            if len(parts) == 6 and parts[0] == "api" and parts[1] == "session" \
                    and parts[3] == "item" and parts[5] == "rating":
                state = app.get_session(parts[2])
                if state is None:
                    self._json(404, {"error": "unknown session"})
                    return
                try:
                    index = int(parts[4])
                except ValueError:
                    self._json(400, {"error": "bad item index"})
                    return
                if not (0 <= index < len(state.items)):
                    self._json(404, {"error": "item index out of range"})
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length).decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError):
                    self._json(400, {"accepted": False,
                                     "errors": {"body": "malformed JSON"}})
                    return
                errors = app.validate_rating(body)
                if errors:
                    self._json(400, {"accepted": False, "errors": errors})
                    return
                record = {
                    "session_id": state.session_id,
                    "subject_id": state.subject_id,
                    "image_id": state.items[index],
                    "item_index": index,
                    "scores": body["scores"],
                    "choices": body["choices"],
                    "explanation": body.get("explanation", ""),
                }
                try:
                    app.append_submission(record)
                except OSError:
                    self._json(500, {"accepted": False,
                                     "errors": {"storage": "write failure"}})
                    return
                state.submitted[index] = record
                self._json(200, {"accepted": True})
                return
            self._json(404, {"error": "not found"})

    return Handler
