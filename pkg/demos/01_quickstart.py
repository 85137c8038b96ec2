"""Quickstart: lay out an ORAM on an in-process server, then read and write
through a stateless client.

The server only ever sees fixed-size ciphertexts and a fixed pattern of
accesses per query. The client keeps nothing between queries: the position
map, logs and stashes all live on the server.

    python demos/01_quickstart.py
"""

from concur_oram.client import open_client, setup_oram
from concur_oram.core import OramParams
from concur_oram.server import ThreadedServer

KEY = b"demo key, keep it secret"

server = ThreadedServer()
params = OramParams(N=64, B=32, c=4, k=4)
setup_oram(server.transport("setup"), params, KEY)

alice = open_client(server.transport("alice"), KEY)
alice.write(7, b"hello, oblivious world")
alice.write(12, b"second block")

# a second client, opened later, sees the first one's writes
bob = open_client(server.transport("bob"), KEY)
print("block 7 :", bob.read(7).rstrip(b"\0"))
print("block 12:", bob.read(12).rstrip(b"\0"))
print("block 3 :", bob.read(3).rstrip(b"\0") or b"(zeros, never written)")

# the server log of what it saw: kinds, regions, offsets, lengths. No payloads.
events = server.core.transcript
print(f"{len(events)} server accesses so far; last few:")
for ev in events[-5:]:
    print("   ", ev.kind.name, ev.region, ev.offset, ev.length)

alice.close()
bob.close()
