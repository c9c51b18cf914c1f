"""Stdio echo server for the prior bridge: replies to every framed request
with the identical payload.  Exists for integration tests of the bridge path.

Run as: python -m ihikit._echo_server
"""

import sys

from .reconstruct import decode_bridge_message, encode_bridge_message


def main() -> int:
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    while True:
        probe = stdin.read(1)
        if not probe:
            return 0

        first = [probe]

        def read(n, _first=first):
            if _first:
                head = _first.pop()
                rest = stdin.read(n - len(head)) if n > len(head) else b""
                return head + rest
            return stdin.read(n)

        arr, stage = decode_bridge_message(read)
        stdout.write(encode_bridge_message(arr, stage))
        stdout.flush()


if __name__ == "__main__":
    raise SystemExit(main())
