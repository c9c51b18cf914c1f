"""Bridge server: serves the trained prior module over the framed protocol.

One request at a time per connection; a stage-0 request resets the
cross-stage feature, so each unfolding run maps to one connection session.
Modes: "prior" applies the checkpoint's prior module (feature carried
between stages), "stateless" resets the feature every request, "echo"
returns the payload unchanged.  Malformed frames close the connection.
"""

from __future__ import annotations

import argparse
import logging
import socket
import socketserver
import threading

import numpy as np
import torch

from .ihic import FormatError, decode_bridge_message, encode_bridge_message

log = logging.getLogger("ihrutnet.server")


class BridgeServer:
    def __init__(self, host: str, port: int, mode: str = "echo",
                 checkpoint: str | None = None):
        if mode not in ("echo", "prior", "stateless"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.model = None
        self.scale = 1.0
        if mode != "echo":
            if checkpoint is None:
                raise ValueError("prior modes need a checkpoint")
            from .train import load_checkpoint

            self.model, dataset, blob = load_checkpoint(checkpoint)
            self.scale = float(blob["target_rate"])
        self.error_count = 0
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                feat = None
                while True:
                    try:
                        arr, stage = decode_bridge_message(self._recv)
                    except FormatError as exc:
                        outer.error_count += 1
                        log.warning("closing connection: %s", exc)
                        return
                    except ConnectionError:
                        return
                    try:
                        out, feat = outer.apply(arr, stage, feat)
                    except Exception as exc:  # report and drop the session
                        outer.error_count += 1
                        log.warning("closing connection: %s", exc)
                        return
                    self.request.sendall(encode_bridge_message(out, stage))

            def _recv(self, n):
                try:
                    return self.request.recv(n)
                except socket.timeout:
                    return b""

        class Server(socketserver.TCPServer):
            allow_reuse_address = True

        self._server = Server((host, port), Handler)
        self.port = self._server.server_address[1]
        self._thread = None

    def apply(self, arr: np.ndarray, stage: int, feat):
        if self.mode == "echo":
            return arr, feat
        if self.mode == "stateless" or stage == 0:
            feat = None
        with torch.no_grad():
            z = torch.from_numpy(arr.transpose(2, 0, 1)[None].copy()).float() / self.scale
            out, feat_next = self.model.prior_only(z, feat, stage)
            out = out[0].numpy().transpose(1, 2, 0).astype(np.float64) * self.scale
        keep = None if self.mode == "stateless" else feat_next
        return np.ascontiguousarray(out), keep

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="serve the prior over the bridge protocol")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7733)
    parser.add_argument("--mode", default="prior", choices=("echo", "prior", "stateless"))
    parser.add_argument("--checkpoint", default=None)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    server = BridgeServer(args.host, args.port, mode=args.mode, checkpoint=args.checkpoint)
    print(f"serving mode={args.mode} on {args.host}:{server.port}")
    try:
        server._server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
