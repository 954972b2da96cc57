"""Wire formats for the three channels plus the session handshake.

Frame layout (little endian): magic u16 = 0x7E1E, type u8, payload length
u16, payload, CRC32 of the payload. The decoder is total: any byte string
yields either a message or a typed DecodeError, never a crash, and the
length field is capped so hostile input cannot force large allocations.

The browser console speaks the same messages re-encoded as JSON objects
with identical field names (see to_json/from_json and docs/protocol.md).
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose

MAGIC = 0x7E1E
PROTOCOL_VERSION = 1
MAX_PAYLOAD = 4096  # decoder allocation cap
HEADER = struct.Struct("<HBH")
CRC = struct.Struct("<I")
TOKEN_LEN = 16

SESSION_TIMEOUT_US = 120_000_000  # resume window after a drop


class MsgType(enum.IntEnum):
    HELLO = 0x01
    RESUME = 0x02
    ACCEPT = 0x03
    REJECT = 0x04
    WAYPOINT = 0x10
    MOTION_CMD = 0x11
    FEEDBACK = 0x12
    STATE = 0x13


class Gripper(enum.IntEnum):
    HOLD = 0
    OPEN = 1
    CLOSE = 2


class Button(enum.IntFlag):
    NONE = 0
    START_TEST = 1
    RESET_TESTER = 2
    ESTOP = 4


class RejectReason(enum.IntEnum):
    BUSY = 1
    EXPIRED = 2
    INVALID_TOKEN = 3
    VERSION_MISMATCH = 4


class DecodeError(Exception):
    """Base for every decoder failure; decoding never raises anything else."""


class TruncatedError(DecodeError):
    pass


class BadMagicError(DecodeError):
    pass


class BadCrcError(DecodeError):
    pass


class UnknownTypeError(DecodeError):
    pass


class LengthMismatchError(DecodeError):
    pass


class FieldError(DecodeError):
    pass


@dataclass
class SessionHello:
    protocol_version: int = PROTOCOL_VERSION


@dataclass
class SessionResume:
    token: bytes
    protocol_version: int = PROTOCOL_VERSION


@dataclass
class SessionAccept:
    token: bytes


@dataclass
class SessionReject:
    reason: RejectReason


@dataclass
class WaypointMsg:
    seq: int
    send_time: int  # us since session epoch
    pose: Pose
    clutch: bool
    gripper: Gripper = Gripper.HOLD
    buttons: Button = Button.NONE


@dataclass
class MotionCmd:
    seq: int
    send_time: int
    q_target: np.ndarray

    def __post_init__(self):
        self.q_target = np.asarray(self.q_target, dtype=float).reshape(6)


@dataclass
class FeedbackMsg:
    seq_echo: int
    q_actual: np.ndarray
    arm_time: int

    def __post_init__(self):
        self.q_actual = np.asarray(self.q_actual, dtype=float).reshape(6)


class TaskStep(enum.IntEnum):
    CONNECT = 0
    PICK = 1
    PLACE = 2
    TEST = 3
    RETURN = 4


class TesterPhase(enum.IntEnum):
    IDLE = 0
    RUNNING = 1
    COMPLETE = 2
    FAULT = 3


@dataclass
class StateMsg:
    """Server -> operator telemetry snapshot (console render source)."""

    arm_time: int = 0
    q_actual: np.ndarray = field(default_factory=lambda: np.zeros(6))
    tcp: Pose = field(default_factory=Pose)
    clutch: bool = False
    clamped: bool = False
    lock_orientation: bool = False
    specimen_loaded: bool = False
    task_step: TaskStep = TaskStep.CONNECT
    tester_phase: TesterPhase = TesterPhase.IDLE
    tester_progress: float = 0.0
    cycle_count: int = 0
    degraded_events: int = 0
    warnings: int = 0
    last_yield: float = float("nan")

    def __post_init__(self):
        self.q_actual = np.asarray(self.q_actual, dtype=float).reshape(6)


Message = (
    SessionHello
    | SessionResume
    | SessionAccept
    | SessionReject
    | WaypointMsg
    | MotionCmd
    | FeedbackMsg
    | StateMsg
)

_HELLO = struct.Struct("<H")
_RESUME = struct.Struct(f"<H{TOKEN_LEN}s")
_ACCEPT = struct.Struct(f"<{TOKEN_LEN}s")
_REJECT = struct.Struct("<B")
_WAYPOINT = struct.Struct("<IQ7dBBB")
_MOTION = struct.Struct("<IQ6d")
_FEEDBACK = struct.Struct("<I6dQ")
_STATE = struct.Struct("<Q6d7dBBBBBBfIIId")


def _pack_payload(msg: Message) -> tuple[int, bytes]:
    if isinstance(msg, SessionHello):
        return MsgType.HELLO, _HELLO.pack(msg.protocol_version)
    if isinstance(msg, SessionResume):
        if len(msg.token) != TOKEN_LEN:
            raise ValueError(f"token must be {TOKEN_LEN} bytes")
        return MsgType.RESUME, _RESUME.pack(msg.protocol_version, msg.token)
    if isinstance(msg, SessionAccept):
        if len(msg.token) != TOKEN_LEN:
            raise ValueError(f"token must be {TOKEN_LEN} bytes")
        return MsgType.ACCEPT, _ACCEPT.pack(msg.token)
    if isinstance(msg, SessionReject):
        return MsgType.REJECT, _REJECT.pack(int(msg.reason))
    if isinstance(msg, WaypointMsg):
        p = msg.pose
        return MsgType.WAYPOINT, _WAYPOINT.pack(
            msg.seq,
            msg.send_time,
            *p.position,
            *p.orientation,
            1 if msg.clutch else 0,
            int(msg.gripper),
            int(msg.buttons),
        )
    if isinstance(msg, MotionCmd):
        return MsgType.MOTION_CMD, _MOTION.pack(msg.seq, msg.send_time, *msg.q_target)
    if isinstance(msg, FeedbackMsg):
        return MsgType.FEEDBACK, _FEEDBACK.pack(msg.seq_echo, *msg.q_actual, msg.arm_time)
    if isinstance(msg, StateMsg):
        return MsgType.STATE, _STATE.pack(
            msg.arm_time,
            *msg.q_actual,
            *msg.tcp.position,
            *msg.tcp.orientation,
            1 if msg.clutch else 0,
            1 if msg.clamped else 0,
            1 if msg.lock_orientation else 0,
            1 if msg.specimen_loaded else 0,
            int(msg.task_step),
            int(msg.tester_phase),
            msg.tester_progress,
            msg.cycle_count,
            msg.degraded_events,
            msg.warnings,
            msg.last_yield,
        )
    raise TypeError(f"cannot encode {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    mtype, payload = _pack_payload(msg)
    return HEADER.pack(MAGIC, mtype, len(payload)) + payload + CRC.pack(zlib.crc32(payload))


def _finite(*vals) -> bool:
    return all(np.isfinite(v) for v in vals)


def _unpack_payload(mtype: int, payload: bytes) -> Message:
    try:
        expected = {
            MsgType.HELLO: _HELLO.size,
            MsgType.RESUME: _RESUME.size,
            MsgType.ACCEPT: _ACCEPT.size,
            MsgType.REJECT: _REJECT.size,
            MsgType.WAYPOINT: _WAYPOINT.size,
            MsgType.MOTION_CMD: _MOTION.size,
            MsgType.FEEDBACK: _FEEDBACK.size,
            MsgType.STATE: _STATE.size,
        }[MsgType(mtype)]
    except ValueError:
        raise UnknownTypeError(f"unknown message type 0x{mtype:02x}") from None
    if len(payload) != expected:
        raise LengthMismatchError(
            f"type 0x{mtype:02x}: payload {len(payload)} bytes, expected {expected}"
        )

    if mtype == MsgType.HELLO:
        (version,) = _HELLO.unpack(payload)
        return SessionHello(version)
    if mtype == MsgType.RESUME:
        version, token = _RESUME.unpack(payload)
        return SessionResume(token=token, protocol_version=version)
    if mtype == MsgType.ACCEPT:
        (token,) = _ACCEPT.unpack(payload)
        return SessionAccept(token)
    if mtype == MsgType.REJECT:
        (reason,) = _REJECT.unpack(payload)
        try:
            return SessionReject(RejectReason(reason))
        except ValueError:
            raise FieldError(f"unknown reject reason {reason}") from None
    if mtype == MsgType.WAYPOINT:
        vals = _WAYPOINT.unpack(payload)
        seq, send_time = vals[0], vals[1]
        pos = vals[2:5]
        quat = vals[5:9]
        clutch, grip, buttons = vals[9], vals[10], vals[11]
        if not _finite(*pos, *quat):
            raise FieldError("waypoint pose has non-finite values")
        try:
            pose = Pose(np.array(pos), np.array(quat))
            gripper = Gripper(grip)
        except ValueError as e:
            raise FieldError(str(e)) from None
        if buttons & ~int(Button.START_TEST | Button.RESET_TESTER | Button.ESTOP):
            raise FieldError(f"unknown button bits 0x{buttons:02x}")
        return WaypointMsg(seq, send_time, pose, bool(clutch & 1), gripper, Button(buttons))
    if mtype == MsgType.MOTION_CMD:
        vals = _MOTION.unpack(payload)
        if not _finite(*vals[2:]):
            raise FieldError("motion command has non-finite joints")
        return MotionCmd(vals[0], vals[1], np.array(vals[2:]))
    if mtype == MsgType.FEEDBACK:
        vals = _FEEDBACK.unpack(payload)
        if not _finite(*vals[1:7]):
            raise FieldError("feedback has non-finite joints")
        return FeedbackMsg(vals[0], np.array(vals[1:7]), vals[7])
    # STATE
    vals = _STATE.unpack(payload)
    arm_time = vals[0]
    q = vals[1:7]
    pos, quat = vals[7:10], vals[10:14]
    flags = vals[14:20]
    progress, cycles, degraded, warnings, last_yield = vals[20], vals[21], vals[22], vals[23], vals[24]
    if not _finite(*q, *pos, *quat):
        raise FieldError("state has non-finite values")
    try:
        tcp = Pose(np.array(pos), np.array(quat))
        step = TaskStep(flags[4])
        phase = TesterPhase(flags[5])
    except ValueError as e:
        raise FieldError(str(e)) from None
    return StateMsg(
        arm_time=arm_time,
        q_actual=np.array(q),
        tcp=tcp,
        clutch=bool(flags[0] & 1),
        clamped=bool(flags[1] & 1),
        lock_orientation=bool(flags[2] & 1),
        specimen_loaded=bool(flags[3] & 1),
        task_step=step,
        tester_phase=phase,
        tester_progress=float(progress),
        cycle_count=cycles,
        degraded_events=degraded,
        warnings=warnings,
        last_yield=float(last_yield),
    )


def decode(data: bytes) -> Message:
    """Decode one complete frame; raises a DecodeError subclass otherwise."""
    msg, consumed = decode_frame(data)
    if msg is None:
        raise TruncatedError("incomplete frame")
    if consumed != len(data):
        raise LengthMismatchError(f"{len(data) - consumed} trailing bytes after frame")
    return msg


def decode_frame(buf: bytes) -> tuple[Message | None, int]:
    """Streaming decode: (message, consumed) or (None, 0) when more bytes are needed."""
    if len(buf) < HEADER.size:
        return None, 0
    magic, mtype, length = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:04x}")
    if length > MAX_PAYLOAD:
        raise LengthMismatchError(f"payload length {length} exceeds cap {MAX_PAYLOAD}")
    total = HEADER.size + length + CRC.size
    if len(buf) < total:
        return None, 0
    payload = bytes(buf[HEADER.size : HEADER.size + length])
    (crc,) = CRC.unpack_from(buf, HEADER.size + length)
    if crc != zlib.crc32(payload):
        raise BadCrcError("payload CRC mismatch")
    return _unpack_payload(mtype, payload), total


class StreamDecoder:
    """Accumulates stream bytes and yields complete frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out = []
        while True:
            msg, consumed = decode_frame(self._buf)
            if msg is None:
                return out
            del self._buf[:consumed]
            out.append(msg)


# ---------------------------------------------------------------------------
# Session handshake

class HandshakeEvent(enum.Enum):
    ACCEPTED_NEW = "accepted_new"
    RESUMED = "resumed"
    REJECTED = "rejected"


@dataclass
class Session:
    token: bytes
    operator_id: str
    created_us: int
    last_seen_us: int
    connected: bool = True
    last_seq: int = -1
    stale_drops: int = 0

    def accept_seq(self, seq: int) -> bool:
        """Enforce strictly increasing waypoint sequence numbers."""
        if seq <= self.last_seq:
            self.stale_drops += 1
            return False
        self.last_seq = seq
        return True


class SessionManager:
    """Single-operator session registry with token-based reconnect.

    A disconnected session stays resumable for `timeout_us`; while it is
    alive, new Hello attempts are rejected busy. Resume always reattaches
    with the clutch forced off (the server core enforces that on RESUMED).
    """

    def __init__(self, timeout_us: int = SESSION_TIMEOUT_US, token_source=None):
        import secrets

        self.timeout_us = timeout_us
        self._token_source = token_source or (lambda: secrets.token_bytes(TOKEN_LEN))
        self.session: Session | None = None

    def _alive(self, now_us: int) -> bool:
        s = self.session
        if s is None:
            return False
        return s.connected or (now_us - s.last_seen_us) <= self.timeout_us

    def handshake(
        self, msg: SessionHello | SessionResume, now_us: int, operator_id: str = "operator"
    ) -> tuple[HandshakeEvent, Message]:
        if msg.protocol_version != PROTOCOL_VERSION:
            return HandshakeEvent.REJECTED, SessionReject(RejectReason.VERSION_MISMATCH)
        if isinstance(msg, SessionHello):
            if self._alive(now_us):
                return HandshakeEvent.REJECTED, SessionReject(RejectReason.BUSY)
            token = self._token_source()
            self.session = Session(
                token=token, operator_id=operator_id, created_us=now_us, last_seen_us=now_us
            )
            return HandshakeEvent.ACCEPTED_NEW, SessionAccept(token)
        # resume
        s = self.session
        if s is None or msg.token != s.token:
            return HandshakeEvent.REJECTED, SessionReject(RejectReason.INVALID_TOKEN)
        if (now_us - s.last_seen_us) > self.timeout_us:
            self.session = None
            return HandshakeEvent.REJECTED, SessionReject(RejectReason.EXPIRED)
        s.connected = True
        s.last_seen_us = now_us
        return HandshakeEvent.RESUMED, SessionAccept(s.token)

    def touch(self, now_us: int) -> None:
        if self.session is not None:
            self.session.last_seen_us = now_us

    def disconnect(self, now_us: int) -> None:
        if self.session is not None:
            self.session.connected = False
            self.session.last_seen_us = now_us

    def drop(self) -> None:
        self.session = None


# ---------------------------------------------------------------------------
# JSON mirror (browser console transport)

_GRIPPER_NAMES = {Gripper.HOLD: "hold", Gripper.OPEN: "open", Gripper.CLOSE: "close"}
_GRIPPER_VALUES = {v: k for k, v in _GRIPPER_NAMES.items()}


def _pose_to_json(p: Pose) -> dict:
    return {"position": [float(v) for v in p.position], "orientation": [float(v) for v in p.orientation]}


def _pose_from_json(obj) -> Pose:
    try:
        return Pose(np.array(obj["position"], dtype=float), np.array(obj["orientation"], dtype=float))
    except (KeyError, TypeError, ValueError) as e:
        raise FieldError(f"bad pose object: {e}") from None


def to_json(msg: Message) -> dict:
    """JSON object mirror of a wire message, field names matching the binary layout."""
    if isinstance(msg, SessionHello):
        return {"type": "hello", "protocol_version": msg.protocol_version}
    if isinstance(msg, SessionResume):
        return {"type": "resume", "protocol_version": msg.protocol_version, "token": msg.token.hex()}
    if isinstance(msg, SessionAccept):
        return {"type": "accept", "token": msg.token.hex()}
    if isinstance(msg, SessionReject):
        return {"type": "reject", "reason": msg.reason.name.lower()}
    if isinstance(msg, WaypointMsg):
        return {
            "type": "waypoint",
            "seq": msg.seq,
            "send_time": msg.send_time,
            "pose": _pose_to_json(msg.pose),
            "clutch": msg.clutch,
            "gripper": _GRIPPER_NAMES[msg.gripper],
            "buttons": int(msg.buttons),
        }
    if isinstance(msg, MotionCmd):
        return {
            "type": "motion_cmd",
            "seq": msg.seq,
            "send_time": msg.send_time,
            "q_target": [float(v) for v in msg.q_target],
        }
    if isinstance(msg, FeedbackMsg):
        return {
            "type": "feedback",
            "seq_echo": msg.seq_echo,
            "q_actual": [float(v) for v in msg.q_actual],
            "arm_time": msg.arm_time,
        }
    if isinstance(msg, StateMsg):
        return {
            "type": "state",
            "arm_time": msg.arm_time,
            "q_actual": [float(v) for v in msg.q_actual],
            "tcp": _pose_to_json(msg.tcp),
            "clutch": msg.clutch,
            "clamped": msg.clamped,
            "lock_orientation": msg.lock_orientation,
            "specimen_loaded": msg.specimen_loaded,
            "task_step": msg.task_step.name.lower(),
            "tester_phase": msg.tester_phase.name.lower(),
            "tester_progress": msg.tester_progress,
            "cycle_count": msg.cycle_count,
            "degraded_events": msg.degraded_events,
            "warnings": msg.warnings,
            "last_yield": None if np.isnan(msg.last_yield) else msg.last_yield,
        }
    raise TypeError(f"cannot serialize {type(msg).__name__}")


def from_json(obj: dict) -> Message:
    """Parse a JSON object into a wire message; raises FieldError on junk."""
    if not isinstance(obj, dict):
        raise FieldError("expected a JSON object")
    kind = obj.get("type")
    try:
        if kind == "hello":
            return SessionHello(int(obj.get("protocol_version", PROTOCOL_VERSION)))
        if kind == "resume":
            token = bytes.fromhex(obj["token"])
            if len(token) != TOKEN_LEN:
                raise FieldError(f"token must be {TOKEN_LEN} bytes")
            return SessionResume(token=token, protocol_version=int(obj.get("protocol_version", PROTOCOL_VERSION)))
        if kind == "accept":
            return SessionAccept(bytes.fromhex(obj["token"]))
        if kind == "reject":
            return SessionReject(RejectReason[obj["reason"].upper()])
        if kind == "waypoint":
            gripper = _GRIPPER_VALUES.get(str(obj.get("gripper", "hold")).lower())
            if gripper is None:
                raise FieldError(f"unknown gripper {obj.get('gripper')!r}")
            buttons = int(obj.get("buttons", 0))
            if buttons & ~int(Button.START_TEST | Button.RESET_TESTER | Button.ESTOP):
                raise FieldError(f"unknown button bits {buttons}")
            return WaypointMsg(
                seq=int(obj["seq"]),
                send_time=int(obj["send_time"]),
                pose=_pose_from_json(obj["pose"]),
                clutch=bool(obj["clutch"]),
                gripper=gripper,
                buttons=Button(buttons),
            )
        if kind == "motion_cmd":
            return MotionCmd(int(obj["seq"]), int(obj["send_time"]), np.array(obj["q_target"], dtype=float))
        if kind == "feedback":
            return FeedbackMsg(int(obj["seq_echo"]), np.array(obj["q_actual"], dtype=float), int(obj["arm_time"]))
    except FieldError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FieldError(f"bad {kind!r} message: {e}") from None
    raise FieldError(f"unknown message type {kind!r}")
