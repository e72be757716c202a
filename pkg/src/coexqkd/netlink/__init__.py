"""Distillation channel: wire format, transports, shaping and endpoint sessions."""
from .session import (LoopbackResult, SessionConfig, SessionOutcome, run_alice_session,
                      run_bob_session, run_loopback)
from .shaper import ShaperConfig, ShapedTransport, shape_throughput
from .transport import Fault, pipe_pair, tcp_connect, tcp_listen
from .wire import decode_message, encode_message

__all__ = [
    "Fault", "LoopbackResult", "SessionConfig", "SessionOutcome", "ShapedTransport",
    "ShaperConfig", "decode_message", "encode_message", "pipe_pair", "run_alice_session",
    "run_bob_session", "run_loopback", "shape_throughput", "tcp_connect", "tcp_listen",
]
