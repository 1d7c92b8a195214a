"""
External Predictor Bridge

Newline-delimited JSON records over a byte stream let an external process
serve as the observer's predictor. One request is outstanding at a time.

Records (one JSON object per line, field ``type`` first):
    hello    client → server   {version}
    declare  server → client   {version, name, state_labels, output_labels,
                                extended_labels, input_labels}
    step     client → server   {index, x, u, dz}
    result   server → client   {index, x, y, z}
    outputs  client → server   {x, u, dz}
    values   server → client   {y, z}
    error    either way        {kind, message[, channel]}
    bye      client → server   {}

Floats are written with Python's shortest round-trip repr, so decoded
vectors are bit-identical to the encoded ones.

Addresses: ``tcp://host:port``, ``unix:///path/to.sock``, ``stdio:<command>``.
"""

import json
import queue
import shlex
import socket
import socketserver
import subprocess
import sys
import threading
from typing import Any, BinaryIO, Callable, Dict, Optional, Tuple

import numpy as np

from .dynamics import INPUT_LABELS
from .errors import (
    BridgeError, BridgeTimeoutError, DimensionError, HandshakeError, IntegrationError,
    OutOfOrderError, RemoteError, SilError, StreamClosedError, VersionMismatchError,
)
from .logger import get_logger
from .observer import Prediction, Predictor

logger = get_logger("xbridge")

PROTOCOL_VERSION = "sil-xbridge/1"
DEFAULT_TIMEOUT = 5.0


# =============================================================================
# Framing
# =============================================================================

def encode_record(record: Dict[str, Any]) -> bytes:
    return (json.dumps(record, separators=(",", ":")) + "\n").encode("utf-8")


def decode_record(line: bytes) -> Dict[str, Any]:
    try:
        record = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise BridgeError(f"malformed record: {e}") from None
    if not isinstance(record, dict) or not isinstance(record.get("type"), str):
        raise BridgeError("malformed record: expected an object with a 'type' field")
    return record


def _vector(values) -> list:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def _field(record: Dict[str, Any], name: str, size: int) -> np.ndarray:
    """Numeric vector field of a record, length-checked"""
    raw = record.get(name)
    if not isinstance(raw, list):
        raise BridgeError(f"record '{record['type']}' lacks vector field '{name}'")
    try:
        vec = np.array([float(v) for v in raw], dtype=float)
    except (TypeError, ValueError):
        raise BridgeError(f"field '{name}' is not numeric") from None
    if vec.size != size:
        raise DimensionError(name, size, vec.size)
    return vec


class LineChannel:
    """
    Record stream over a reader/writer pair.

    A daemon thread drains the reader so receives can time out on any
    transport (sockets and pipes alike).
    """

    def __init__(self, reader: BinaryIO, writer: BinaryIO, timeout: Optional[float] = DEFAULT_TIMEOUT,
                 on_close: Optional[Callable[[], None]] = None):
        self.reader = reader
        self.writer = writer
        self.timeout = timeout
        self._on_close = on_close
        self._lines: "queue.Queue[Optional[bytes]]" = queue.Queue()
        self._closed = False
        self._pump = threading.Thread(target=self._drain, daemon=True)
        self._pump.start()

    def _drain(self):
        try:
            for line in iter(self.reader.readline, b""):
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def send(self, record: Dict[str, Any]):
        try:
            self.writer.write(encode_record(record))
            self.writer.flush()
        except (OSError, ValueError) as e:
            raise StreamClosedError(None) from e

    def receive(self) -> Optional[Dict[str, Any]]:
        """Next record, or None at end of stream"""
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise BridgeTimeoutError(f"no record within {self.timeout} s") from None
        if line is None:
            self._lines.put(None)
            return None
        return decode_record(line)

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self.writer.close()
        except OSError:
            pass
        # Transport teardown ends the pump before the reader is closed under it
        if self._on_close is not None:
            self._on_close()
        self._pump.join(timeout=self.timeout)
        try:
            self.reader.close()
        except OSError:
            pass


# =============================================================================
# Client adapter
# =============================================================================

def _labels(record: Dict[str, Any], name: str) -> Tuple[str, ...]:
    raw = record.get(name)
    if not isinstance(raw, list) or not all(isinstance(v, str) for v in raw):
        raise HandshakeError(f"declaration field '{name}' must be a list of labels")
    if len(set(raw)) != len(raw):
        raise HandshakeError(f"declaration field '{name}' has duplicate labels")
    return tuple(raw)


class RemotePredictor(Predictor):
    """Predictor served by an external process over xbridge"""

    def __init__(self, channel: LineChannel, address: str = ""):
        self.channel = channel
        self.address = address
        self.name = "extern"
        self.last_step: Optional[int] = None
        self._index = 0

    def handshake(self) -> "RemotePredictor":
        """
        Exchange versions and read the label declaration.

        Raises:
            VersionMismatchError: the server speaks another protocol version
            HandshakeError: malformed declaration or an error record
            BridgeTimeoutError: no declaration within the timeout
        """
        self.channel.send({"type": "hello", "version": PROTOCOL_VERSION})
        record = self.channel.receive()
        if record is None:
            raise HandshakeError("stream closed during handshake")
        if record["type"] == "error":
            if record.get("kind") == "version":
                raise VersionMismatchError(PROTOCOL_VERSION, str(record.get("version", "?")))
            raise HandshakeError(f"server refused handshake: {record.get('message', '')}")
        if record["type"] != "declare":
            raise HandshakeError(f"expected a declare record, got '{record['type']}'")
        if record.get("version") != PROTOCOL_VERSION:
            raise VersionMismatchError(PROTOCOL_VERSION, str(record.get("version")))

        self.state_labels = _labels(record, "state_labels")
        self.output_labels = _labels(record, "output_labels")
        self.extended_labels = _labels(record, "extended_labels")
        inputs = _labels(record, "input_labels")
        if inputs != INPUT_LABELS:
            raise HandshakeError(f"server declares inputs {list(inputs)}, expected {list(INPUT_LABELS)}")
        if not self.state_labels or not self.output_labels:
            raise HandshakeError("server declares no states or no outputs")
        self.name = f"extern:{record.get('name', 'remote')}"
        logger.info(f"xbridge handshake with {self.address or 'peer'} complete: "
                    f"{self.name} dims ({self.n_states}, {self.n_outputs}, {self.n_extended})")
        return self

    def _request(self, record: Dict[str, Any]) -> Dict[str, Any]:
        self.channel.send(record)
        reply = self.channel.receive()
        if reply is None:
            raise StreamClosedError(self.last_step)
        if reply["type"] == "error":
            if reply.get("kind") == "integration":
                raise IntegrationError(str(reply.get("channel", "?")))
            raise RemoteError(str(reply.get("message", "remote predictor error")),
                              str(reply.get("kind", "protocol")))
        return reply

    def step(self, x, u, dz) -> Prediction:
        """One remote prediction; see `remote_step`"""
        index = self._index + 1
        self._index = index
        reply = self._request({"type": "step", "index": index, "x": _vector(x),
                               "u": _vector(u), "dz": _vector(dz)})
        if reply["type"] != "result":
            raise BridgeError(f"expected a result record, got '{reply['type']}'")
        if reply.get("index") != index:
            raise OutOfOrderError(index, reply.get("index"))
        prediction = Prediction(_field(reply, "x", self.n_states), _field(reply, "y", self.n_outputs),
                                _field(reply, "z", self.n_extended))
        self.last_step = index
        return prediction

    def outputs(self, x, u, dz):
        reply = self._request({"type": "outputs", "x": _vector(x), "u": _vector(u),
                               "dz": _vector(dz)})
        if reply["type"] != "values":
            raise BridgeError(f"expected a values record, got '{reply['type']}'")
        return _field(reply, "y", self.n_outputs), _field(reply, "z", self.n_extended)

    def close(self):
        try:
            self.channel.send({"type": "bye"})
        except BridgeError:
            pass
        self.channel.close()


def remote_step(adapter: RemotePredictor, x_hat, u, dz_hat) -> Prediction:
    """
    One request/response exchange.

    Raises:
        BridgeTimeoutError, DimensionError, OutOfOrderError, StreamClosedError,
        RemoteError: all fatal to the run
    """
    return adapter.step(x_hat, u, dz_hat)


def parse_address(address: str) -> Tuple[str, str]:
    """Split an address into (scheme, target)"""
    for scheme in ("tcp://", "unix://", "stdio:"):
        if address.startswith(scheme):
            target = address[len(scheme):]
            if not target:
                break
            return scheme.rstrip(":/"), target
    raise BridgeError(f"unsupported xbridge address '{address}'")


def _split_host_port(target: str) -> Tuple[str, int]:
    host, _, port = target.rpartition(":")
    if not host or not port.isdigit():
        raise BridgeError(f"tcp address needs host:port (got '{target}')")
    return host, int(port)


def open_channel(address: str, timeout: float = DEFAULT_TIMEOUT) -> LineChannel:
    scheme, target = parse_address(address)
    if scheme == "stdio":
        proc = subprocess.Popen(shlex.split(target), stdin=subprocess.PIPE, stdout=subprocess.PIPE)

        def reap():
            try:
                proc.wait(timeout=timeout)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

        return LineChannel(proc.stdout, proc.stdin, timeout, on_close=reap)

    try:
        if scheme == "tcp":
            sock = socket.create_connection(_split_host_port(target), timeout=timeout)
        else:
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.settimeout(timeout)
            sock.connect(target)
    except socket.timeout:
        raise BridgeTimeoutError(f"connecting to {address} timed out") from None
    except OSError as e:
        raise BridgeError(f"cannot connect to {address}: {e}") from e
    sock.settimeout(None)

    def teardown():
        try:
            sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        sock.close()

    return LineChannel(sock.makefile("rb"), sock.makefile("wb"), timeout, on_close=teardown)


def connect(address: str, timeout: float = DEFAULT_TIMEOUT) -> RemotePredictor:
    """Open a connection and complete the handshake"""
    channel = open_channel(address, timeout)
    adapter = RemotePredictor(channel, address)
    try:
        return adapter.handshake()
    except BaseException:
        channel.close()
        raise


def handshake(channel: LineChannel) -> RemotePredictor:
    """Handshake over an already open channel"""
    return RemotePredictor(channel).handshake()


# =============================================================================
# Server
# =============================================================================

class BridgeTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class BridgeUnixServer(socketserver.ThreadingUnixStreamServer):
    daemon_threads = True


class PredictorServer:
    """Serves one in-process predictor over xbridge connections"""

    def __init__(self, predictor: Predictor):
        self.predictor = predictor

    def declaration(self) -> Dict[str, Any]:
        p = self.predictor
        return {"type": "declare", "version": PROTOCOL_VERSION, "name": p.name,
                "state_labels": list(p.state_labels), "output_labels": list(p.output_labels),
                "extended_labels": list(p.extended_labels), "input_labels": list(INPUT_LABELS)}

    def _error(self, channel: LineChannel, kind: str, message: str, **extra):
        record = {"type": "error", "kind": kind, "message": message}
        record.update(extra)
        channel.send(record)

    def serve_channel(self, channel: LineChannel) -> int:
        """
        Handle one connection until ``bye`` or end of stream.

        Malformed records get an error record and end the connection.

        Returns:
            Number of steps served
        """
        p = self.predictor
        try:
            hello = channel.receive()
            if hello is None:
                return 0
            if hello["type"] != "hello":
                self._error(channel, "protocol", f"expected hello, got '{hello['type']}'")
                return 0
            if hello.get("version") != PROTOCOL_VERSION:
                self._error(channel, "version", f"server speaks {PROTOCOL_VERSION}",
                            version=PROTOCOL_VERSION)
                return 0
            channel.send(self.declaration())

            expected = 1
            while True:
                record = channel.receive()
                if record is None or record["type"] == "bye":
                    return expected - 1
                kind = record["type"]
                if kind not in ("step", "outputs"):
                    self._error(channel, "protocol", f"unexpected record '{kind}'")
                    return expected - 1
                x = _field(record, "x", p.n_states)
                u = _field(record, "u", len(INPUT_LABELS))
                dz = _field(record, "dz", p.n_extended)
                if kind == "outputs":
                    try:
                        y, z = p.outputs(x, u, dz)
                    except IntegrationError as e:
                        self._error(channel, "integration", str(e), channel=e.channel)
                        continue
                    except (SilError, ValueError) as e:
                        self._error(channel, "predictor", str(e))
                        continue
                    channel.send({"type": "values", "y": _vector(y), "z": _vector(z)})
                    continue
                if record.get("index") != expected:
                    self._error(channel, "order", str(OutOfOrderError(expected, record.get("index"))))
                    return expected - 1
                try:
                    pred = p.step(x, u, dz)
                except IntegrationError as e:
                    self._error(channel, "integration", str(e), channel=e.channel)
                except (SilError, ValueError) as e:
                    # Bad inputs in a well-formed record; the session stays usable
                    self._error(channel, "predictor", str(e))
                else:
                    channel.send({"type": "result", "index": expected, "x": _vector(pred.x),
                                  "y": _vector(pred.y), "z": _vector(pred.z)})
                expected += 1
        except BridgeError as e:
            try:
                self._error(channel, "protocol", str(e))
            except BridgeError:
                pass
            logger.warning(f"xbridge connection ended: {e}")
            return 0

    # -------------------------------------------------------------------------
    # Transports
    # -------------------------------------------------------------------------

    def _handler(self):
        server = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                channel = LineChannel(self.rfile, self.wfile, timeout=None)
                steps = server.serve_channel(channel)
                try:
                    self.request.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                logger.debug(f"xbridge connection closed after {steps} steps")

        return Handler

    def tcp_server(self, host: str = "127.0.0.1", port: int = 0) -> socketserver.ThreadingTCPServer:
        """Bound (not yet serving) TCP server; port 0 picks a free port"""
        return BridgeTCPServer((host, port), self._handler())

    def unix_server(self, path: str) -> socketserver.ThreadingUnixStreamServer:
        return BridgeUnixServer(path, self._handler())

    def serve_stdio(self) -> int:
        """Serve a single session over this process's stdin/stdout"""
        channel = LineChannel(sys.stdin.buffer, sys.stdout.buffer, timeout=None)
        return self.serve_channel(channel)


def start_loopback(predictor: Predictor) -> Tuple[str, socketserver.ThreadingTCPServer]:
    """
    Serve a predictor on a free local TCP port in a background thread.

    Returns:
        (address, server); call ``server.shutdown()`` when done
    """
    server = PredictorServer(predictor).tcp_server("127.0.0.1", 0)
    host, port = server.server_address[:2]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return f"tcp://{host}:{port}", server
