"""Line-delimited JSON embedding service over stdio.

An external generation loop (typically the bridge adapter wrapping a real
language model) spawns this process, announces the session with INIT, and
then alternates STEP_REQUEST / STEP_REPLY one token at a time:

  -> {"type": "INIT", "protocol": 1, "N": ..., "p": ..., "r": ..., "phi": ...,
      "k": ..., "code_seed": ..., "stream_id": ..., "message_bits": [...],
      "master_key_hex": "..."?}
  <- {"type": "READY", "protocol": 1}
  -> {"type": "STEP_REQUEST", "t": 1, "logits": [w_0, ..., w_{N-1}],
      "temperature": 1.0, "top_k": 50}
  <- {"type": "STEP_REPLY", "t": 1, "token_id": 17}
  ...
  -> {"type": "CLOSE", "n_emitted": n}
  <- {"type": "CLOSED", "n_emitted": n}

The ``logits`` field carries the caller's final sampling weights (already
temperature/top-k shaped; nonnegative, zeros off support); the core only
renormalizes, so the identical vector replayed later reproduces the same
token. ``temperature`` and ``top_k`` ride along as provenance. The master
key comes from the INIT field or the CIRCLEMARK_KEY environment variable
and is never echoed back.
"""

from __future__ import annotations

import json
import math
import sys

import numpy as np

from .circle import CircleParams, theorem2_phi
from .embedder import EmbedConfig, embed_step
from .errors import ParameterError, ProtocolError
from .modcode import CodeParams, Message, make_generator
from .sideinfo import MasterKey, derive_step, sampling_seed_for_stream
from .transport import TokenDistribution

PROTOCOL_VERSION = 1
_INIT_FIELDS = ("N", "p", "r", "phi", "k", "code_seed", "stream_id", "message_bits")


class _Session:
    def __init__(self, init: dict):
        for field in _INIT_FIELDS:
            if field not in init:
                raise ProtocolError(f"INIT missing field {field!r}")
        if init.get("protocol", PROTOCOL_VERSION) != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {init.get('protocol')!r}")
        self.N = int(init["N"])
        self.p = int(init["p"])
        self.r = int(init["r"])
        self.phi = float(init["phi"])
        self.k = int(init["k"])
        self.code_seed = int(init["code_seed"])
        stream_id = int(init["stream_id"])
        if "master_key_hex" in init:
            self.mk = MasterKey.from_hex(init["master_key_hex"], stream_id=stream_id)
        else:
            self.mk = MasterKey.from_env(stream_id=stream_id)
        self.message = Message(np.asarray(init["message_bits"], dtype=np.int64))
        if len(self.message) != self.k:
            raise ProtocolError("message_bits length does not match k")
        theorem2 = (
            self.p == self.r == self.N
            and math.isclose(self.phi, theorem2_phi(self.N), rel_tol=0, abs_tol=1e-15)
        )
        self._circle = CircleParams(N=self.N, p=self.p, r=self.r, phi=self.phi)
        self._cfg_for = lambda n: EmbedConfig(
            code=CodeParams(k=self.k, n=n, p=self.p, code_seed=self.code_seed),
            circle=self._circle,
            theorem2_mode=theorem2,
        )
        self.rng = np.random.default_rng(sampling_seed_for_stream(self.mk))
        self.next_t = 1
        self._n_cap = 0
        self._G = None
        self._grow_code(256)

    def _grow_code(self, n: int) -> None:
        # column-prefix consistency makes regrowing from scratch safe
        while self._n_cap < n:
            self._n_cap = max(256, self._n_cap * 2)
        self._G = make_generator(
            CodeParams(k=self.k, n=self._n_cap, p=self.p, code_seed=self.code_seed)
        )
        self._codeword = (self.message.bits @ self._G.entries) % self.p

    def step(self, request: dict) -> dict:
        t = int(request["t"])
        if t != self.next_t:
            raise ProtocolError(f"expected step t={self.next_t}, got t={t}")
        weights = np.asarray(request["logits"], dtype=np.float64)
        if weights.size != self.N:
            raise ProtocolError(f"logits length {weights.size} does not match N={self.N}")
        if not np.isfinite(weights).all() or weights.min() < 0:
            raise ProtocolError("logits must be finite nonnegative sampling weights")
        total = weights.sum()
        if total <= 0:
            raise ProtocolError("logits must have positive total mass")
        top_k = request.get("top_k")
        if top_k is not None and not 1 <= int(top_k) <= self.N:
            raise ProtocolError(f"top_k {top_k} out of range [1, N]")
        if t > self._n_cap:
            self._grow_code(t)
        Q = TokenDistribution.from_probs(weights / total)
        secret = derive_step(self.mk, t, self.N, self.r)
        token, _ = embed_step(
            Q, int(self._codeword[t - 1]), secret, self._cfg_for(self._n_cap), self.rng
        )
        self.next_t += 1
        return {"type": "STEP_REPLY", "t": t, "token_id": int(token)}

    @property
    def n_emitted(self) -> int:
        return self.next_t - 1


def serve(stdin=None, stdout=None) -> int:
    """Run one session; returns the process exit code."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def send(obj: dict) -> None:
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    session = None
    try:
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            msg = json.loads(line)
            kind = msg.get("type")
            if kind == "INIT":
                if session is not None:
                    raise ProtocolError("duplicate INIT")
                session = _Session(msg)
                send({"type": "READY", "protocol": PROTOCOL_VERSION})
            elif kind == "STEP_REQUEST":
                if session is None:
                    raise ProtocolError("STEP_REQUEST before INIT")
                send(session.step(msg))
            elif kind == "CLOSE":
                if session is None:
                    raise ProtocolError("CLOSE before INIT")
                claimed = int(msg.get("n_emitted", session.n_emitted))
                if claimed != session.n_emitted:
                    raise ProtocolError(
                        f"peer claims {claimed} emitted tokens, served {session.n_emitted}"
                    )
                send({"type": "CLOSED", "n_emitted": session.n_emitted})
                return 0
            else:
                raise ProtocolError(f"unknown message type {kind!r}")
    except (ProtocolError, ParameterError, json.JSONDecodeError, KeyError, ValueError) as exc:
        send({"type": "ERROR", "message": str(exc)})
        return 1
    return 0
