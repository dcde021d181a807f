"""Newline-delimited JSON oracle service, simulating a prediction API.

Requests and replies are one JSON object per line::

    -> {"op": "meta"}
    <- {"d": 36, "k": 10, "budget": 200000, "used": 0, "remaining": 200000}
    -> {"op": "query", "phase": "student", "inputs": [[...], ...]}
    <- {"probs": [[...], ...], "used": 64, "remaining": 199936}
    <- {"error": "budget_exhausted"}
    <- {"error": "bad_input", "detail": "..."}

Floats travel at 17 significant digits, so a remote run sees bit-identical
probabilities to an in-process one.  The budget lives in the server's
ledger; clients are never trusted with it.
"""
from __future__ import annotations

import json
import socket
import socketserver
import threading

import numpy as np

from . import jsonio
from .exceptions import BudgetExhausted, ExforgeError, PolicyError, ValidationError
from .oracle import METERED, OracleHandle, QueryLedger


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        oracle: OracleHandle = self.server.oracle
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            reply = self.server.dispatch(oracle, line)
            self.wfile.write((jsonio.dumps(reply) + "\n").encode())
            self.wfile.flush()


class OracleServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, oracle: OracleHandle, host: str = "127.0.0.1", port: int = 0):
        self.oracle = oracle
        super().__init__((host, port), _Handler)

    @staticmethod
    def dispatch(oracle: OracleHandle, line: bytes) -> dict:
        try:
            msg = json.loads(line)
            op = msg.get("op") if isinstance(msg, dict) else None
            if op == "meta":
                ledger = oracle.ledger
                return {"d": oracle.n_features, "k": oracle.n_classes, "budget": ledger.budget,
                        "used": ledger.used_total, "remaining": ledger.remaining}
            if op != "query":
                return {"error": "bad_input", "detail": f"unknown op {op!r}"}
            phase = msg.get("phase", "student")
            inputs = np.asarray(msg["inputs"], dtype=np.float64)
            if inputs.ndim != 2:
                raise ValidationError("inputs must be a list of rows")
            probs = oracle.query(inputs, phase)
            return {"probs": probs, "used": oracle.ledger.used_total,
                    "remaining": oracle.ledger.remaining}
        except BudgetExhausted:
            return {"error": "budget_exhausted"}
        except (ValueError, KeyError, TypeError, ExforgeError) as exc:
            return {"error": "bad_input", "detail": str(exc)}

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


def start_server(oracle: OracleHandle, host: str = "127.0.0.1", port: int = 0) -> OracleServer:
    """Serve ``oracle`` from a background thread; call ``shutdown()`` to stop."""
    server = OracleServer(oracle, host, port)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


class RemoteOracle:
    """Client-side oracle handle speaking the line protocol.

    Exposes the same surface the attack uses (``query``, ``remaining``,
    ``used_total``, ``ledger``), so extraction code runs unchanged against a
    remote service.  Remote oracles never offer white-box diagnostics.
    """

    mode = "probabilities"
    strict = True

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        self._rfile = self._sock.makefile("rb")
        self._lock = threading.Lock()
        meta = self._call({"op": "meta"})
        self.n_features = int(meta["d"])
        self.n_classes = int(meta["k"])
        self._server_remaining = int(meta.get("remaining", meta["budget"]))
        # local view of this client's own spending
        self.ledger = QueryLedger(int(meta["budget"]))

    @classmethod
    def from_address(cls, address: str) -> "RemoteOracle":
        host, _, port = address.rpartition(":")
        return cls(host or "127.0.0.1", int(port))

    def _call(self, msg: dict) -> dict:
        with self._lock:
            self._sock.sendall((jsonio.dumps(msg) + "\n").encode())
            line = self._rfile.readline()
        if not line:
            raise ConnectionError("oracle server closed the connection")
        return json.loads(line)

    @property
    def remaining(self) -> int:
        return min(self._server_remaining, self.ledger.remaining)

    @property
    def used_total(self) -> int:
        return self.ledger.used_total

    def query(self, X, phase: str = "student") -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        reply = self._call({"op": "query", "phase": phase, "inputs": X})
        if "error" in reply:
            if reply["error"] == "budget_exhausted":
                self.ledger.exhausted = True
                raise BudgetExhausted(len(X), self._server_remaining)
            raise ValidationError(reply.get("detail", reply["error"]))
        self._server_remaining = int(reply["remaining"])
        if phase in METERED:
            self.ledger.charge(len(X), phase)
        return np.asarray(reply["probs"], dtype=np.float64)

    def diagnostic_true_logits(self, X):
        raise PolicyError("remote oracles expose probabilities only")

    diagnostic_true_input_grad = diagnostic_true_logits

    def close(self) -> None:
        self._rfile.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
