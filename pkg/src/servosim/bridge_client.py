"""Client for the external feature-bridge wire protocol.

Framing: every message is a 4-byte little-endian unsigned length prefix,
a UTF-8 JSON header of that length, then `payload_bytes` of raw payload.
Requests carry PNG image bytes; feature responses carry row-major float32
descriptor data. One request is in flight per connection at a time.
"""

from __future__ import annotations

import json
import socket
import struct
import threading

import cv2
import numpy as np

from .errors import BridgeUnavailable

PROTOCOL_VERSION = "1"


def write_frame(stream, header: dict, payload: bytes = b"") -> None:
    header = dict(header)
    header["payload_bytes"] = len(payload)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    stream.sendall(struct.pack("<I", len(raw)) + raw + payload)


def read_frame(stream) -> tuple[dict, bytes]:
    prefix = _read_exact(stream, 4)
    (length,) = struct.unpack("<I", prefix)
    header = json.loads(_read_exact(stream, length).decode("utf-8"))
    payload = _read_exact(stream, int(header.get("payload_bytes", 0)))
    return header, payload


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.recv(remaining)
        if not chunk:
            raise BridgeUnavailable("bridge closed the connection mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class BridgeClient:
    """Persistent TCP connection to the feature bridge.

    Serializes requests with a lock; verifies the protocol version on the
    first exchange. All failures surface as BridgeUnavailable.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 5917,
                 timeout: float = 120.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()
        self._checked = False

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                sock = socket.create_connection((self.host, self.port),
                                                timeout=self.timeout)
            except OSError as exc:
                raise BridgeUnavailable(
                    f"cannot reach bridge at {self.host}:{self.port}: {exc}") from exc
            self._sock = sock
        return self._sock

    def _request(self, header: dict, payload: bytes = b"") -> tuple[dict, bytes]:
        with self._lock:
            sock = self._connect()
            try:
                write_frame(sock, header, payload)
                resp, data = read_frame(sock)
            except (OSError, json.JSONDecodeError, struct.error) as exc:
                self.close()
                raise BridgeUnavailable(f"bridge protocol failure: {exc}") from exc
        if resp.get("status") != "ok":
            raise BridgeUnavailable(
                f"bridge error {resp.get('code', '?')}: {resp.get('message', '')}")
        return resp, data

    def healthcheck(self) -> dict:
        resp, _ = self._request({"op": "health"})
        version = str(resp.get("version", ""))
        if version != PROTOCOL_VERSION:
            raise BridgeUnavailable(
                f"protocol version mismatch: bridge speaks {version!r}, "
                f"client expects {PROTOCOL_VERSION!r}")
        return resp

    def extract(self, image_rgb: np.ndarray, resolution: int, layer: int):
        """Request a descriptor grid for an RGB uint8 image."""
        from .descriptors import DescriptorGrid, PATCH_SIZE  # cycle-free at runtime

        if not self._checked:
            self.healthcheck()
            self._checked = True
        ok, buf = cv2.imencode(".png", np.ascontiguousarray(image_rgb[..., ::-1]))
        if not ok:
            raise BridgeUnavailable("failed to encode request image")
        resp, data = self._request(
            {"op": "extract", "width": int(image_rgb.shape[1]),
             "height": int(image_rgb.shape[0]), "resolution": int(resolution),
             "layer": int(layer)},
            buf.tobytes())
        gh, gw, dim = int(resp["h"]), int(resp["w"]), int(resp["d"])
        if len(data) != gh * gw * dim * 4:
            raise BridgeUnavailable(
                f"feature payload is {len(data)} bytes, expected {gh * gw * dim * 4}")
        feats = np.frombuffer(data, dtype="<f4").reshape(gh, gw, dim).astype(np.float64)
        return DescriptorGrid(data=feats, patch_size=PATCH_SIZE, stride=PATCH_SIZE,
                              source_resolution=(resolution, resolution),
                              eligible=np.ones((gh, gw), dtype=bool))

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._checked = False


_shared: dict[tuple[str, int], BridgeClient] = {}
_shared_lock = threading.Lock()


def get_shared_client(host: str, port: int) -> BridgeClient:
    """Process-local client cache so repeated extracts reuse one connection."""
    with _shared_lock:
        client = _shared.get((host, port))
        if client is None:
            client = BridgeClient(host, port)
            _shared[(host, port)] = client
        return client
