"""Press-session data model and bit-exact NDJSON file I/O.

A session file is UTF-8 NDJSON, one record per line:

    {"t":"meta","session_id":S,"user_id":U,"label":L,"cap_hz":20,
     "cap_rows":27,"cap_cols":15,"imu_hz":200,"duration_ms":800}
    {"t":"cap","ts_ms":T,"v":[rows*cols integers, row-major]}
    {"t":"imu","ts_ms":T,"a":[ax,ay,az],"g":[gx,gy,gz],"m":[mx,my,mz]}

Exactly one meta record, first line.  Floats are serialized with fixed
6-decimal precision, which makes write -> read -> write byte-stable and
value round trips exact for 6-decimal inputs.  Capacitance values are raw
non-negative integer counts; no fixed full scale is assumed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

LABELS = ("genuine", "mimicry", "replica", "puppet")

MIN_CAP_FRAMES = 2
MIN_IMU_SAMPLES = 8
TS_SLACK = 1.1  # streams may run 10% past the nominal duration


class SessionFormatError(ValueError):
    """Malformed session file: bad JSON, missing fields, wrong shapes."""


class SessionInvariantError(ValueError):
    """A structurally well-formed session that violates its invariants."""


@dataclass(frozen=True)
class SessionMeta:
    session_id: str
    user_id: str
    label: str
    cap_hz: int = 20
    cap_rows: int = 27
    cap_cols: int = 15
    imu_hz: int = 200
    duration_ms: int = 800


@dataclass(frozen=True, eq=False)
class CapFrame:
    ts_ms: int
    values: np.ndarray  # (rows, cols) non-negative integer counts

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CapFrame):
            return NotImplemented
        return self.ts_ms == other.ts_ms and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class ImuSample:
    ts_ms: int
    a: tuple[float, float, float]
    g: tuple[float, float, float]
    m: tuple[float, float, float]


@dataclass(frozen=True)
class Session:
    meta: SessionMeta
    cap: tuple[CapFrame, ...]
    imu: tuple[ImuSample, ...]

    def relabel(self, **meta_fields) -> "Session":
        return Session(replace(self.meta, **meta_fields), self.cap, self.imu)


def validate_session(session: Session) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    v: list[str] = []
    meta = session.meta
    if meta.cap_rows * meta.cap_cols <= 0:
        v.append(f"cap_rows*cap_cols must be > 0, got {meta.cap_rows}x{meta.cap_cols}")
    if meta.cap_hz <= 0:
        v.append(f"cap_hz must be > 0, got {meta.cap_hz}")
    if meta.imu_hz <= meta.cap_hz:
        v.append(f"imu_hz ({meta.imu_hz}) must exceed cap_hz ({meta.cap_hz})")
    if meta.duration_ms <= 0:
        v.append(f"duration_ms must be > 0, got {meta.duration_ms}")
    if meta.label not in LABELS:
        v.append(f"label must be one of {LABELS}, got {meta.label!r}")

    if len(session.cap) < MIN_CAP_FRAMES:
        v.append(f"len(cap) >= {MIN_CAP_FRAMES} required, got {len(session.cap)}")
    if len(session.imu) < MIN_IMU_SAMPLES:
        v.append(f"len(imu) >= {MIN_IMU_SAMPLES} required, got {len(session.imu)}")

    shape = (meta.cap_rows, meta.cap_cols)
    prev_ts = None
    for i, frame in enumerate(session.cap):
        if frame.values.shape != shape:
            v.append(f"cap[{i}] shape {frame.values.shape} != {shape}")
            continue
        if np.any(frame.values < 0):
            v.append(f"cap[{i}] contains negative counts")
        if prev_ts is not None and frame.ts_ms < prev_ts:
            v.append(f"cap ts_ms decreases at index {i}")
        prev_ts = frame.ts_ms

    if session.imu:
        imu_values = np.array([[*s.a, *s.g, *s.m] for s in session.imu])
        bad = np.nonzero(~np.isfinite(imu_values).all(axis=1))[0]
        for i in bad:
            v.append(f"imu[{i}] contains non-finite components")
        imu_ts = np.array([s.ts_ms for s in session.imu])
        for i in np.nonzero(np.diff(imu_ts) < 0)[0]:
            v.append(f"imu ts_ms decreases at index {i + 1}")

    limit = meta.duration_ms * TS_SLACK
    if session.cap and session.cap[-1].ts_ms > limit:
        v.append(f"cap last ts_ms {session.cap[-1].ts_ms} exceeds duration+10% ({limit:.0f})")
    if session.imu and session.imu[-1].ts_ms > limit:
        v.append(f"imu last ts_ms {session.imu[-1].ts_ms} exceeds duration+10% ({limit:.0f})")
    return v


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _meta_line(meta: SessionMeta) -> str:
    record = {
        "t": "meta",
        "session_id": meta.session_id,
        "user_id": meta.user_id,
        "label": meta.label,
        "cap_hz": meta.cap_hz,
        "cap_rows": meta.cap_rows,
        "cap_cols": meta.cap_cols,
        "imu_hz": meta.imu_hz,
        "duration_ms": meta.duration_ms,
    }
    return json.dumps(record, separators=(",", ":"))


def write_session(session: Session, path: str | os.PathLike) -> None:
    """Serialize a validated session to NDJSON with deterministic bytes."""
    violations = validate_session(session)
    if violations:
        raise SessionInvariantError("; ".join(violations))
    lines = [_meta_line(session.meta)]
    for frame in session.cap:
        vals = ",".join(str(int(x)) for x in frame.values.ravel())
        lines.append(f'{{"t":"cap","ts_ms":{int(frame.ts_ms)},"v":[{vals}]}}')
    for s in session.imu:
        a = ",".join(_fmt(x) for x in s.a)
        g = ",".join(_fmt(x) for x in s.g)
        m = ",".join(_fmt(x) for x in s.m)
        lines.append(f'{{"t":"imu","ts_ms":{int(s.ts_ms)},"a":[{a}],"g":[{g}],"m":[{m}]}}')
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require(record: dict, key: str, lineno: int):
    if key not in record:
        raise SessionFormatError(f"line {lineno}: missing field {key!r}")
    return record[key]


def _vec3(record: dict, key: str, lineno: int) -> tuple[float, float, float]:
    raw = _require(record, key, lineno)
    if not isinstance(raw, list) or len(raw) != 3:
        raise SessionFormatError(f"line {lineno}: field {key!r} must be a 3-vector")
    return (float(raw[0]), float(raw[1]), float(raw[2]))


def read_session(path: str | os.PathLike) -> Session:
    """Parse and fully validate a session file."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise SessionFormatError("empty session file")

    meta: SessionMeta | None = None
    cap: list[CapFrame] = []
    imu: list[ImuSample] = []
    for lineno, line in enumerate(lines, start=1):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SessionFormatError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise SessionFormatError(f"line {lineno}: record must be an object")
        kind = _require(record, "t", lineno)
        if lineno == 1:
            if kind != "meta":
                raise SessionFormatError("first record must be the meta record")
            meta = SessionMeta(
                session_id=str(_require(record, "session_id", lineno)),
                user_id=str(_require(record, "user_id", lineno)),
                label=str(_require(record, "label", lineno)),
                cap_hz=int(_require(record, "cap_hz", lineno)),
                cap_rows=int(_require(record, "cap_rows", lineno)),
                cap_cols=int(_require(record, "cap_cols", lineno)),
                imu_hz=int(_require(record, "imu_hz", lineno)),
                duration_ms=int(_require(record, "duration_ms", lineno)),
            )
            continue
        if kind == "meta":
            raise SessionFormatError(f"line {lineno}: duplicate meta record")
        if kind == "cap":
            assert meta is not None
            raw = _require(record, "v", lineno)
            expected = meta.cap_rows * meta.cap_cols
            if not isinstance(raw, list) or len(raw) != expected:
                got = len(raw) if isinstance(raw, list) else "non-list"
                raise SessionFormatError(
                    f"line {lineno}: cap record has {got} values, expected {expected}"
                )
            values = np.array(raw, dtype=np.int64).reshape(meta.cap_rows, meta.cap_cols)
            cap.append(CapFrame(ts_ms=int(_require(record, "ts_ms", lineno)), values=values))
        elif kind == "imu":
            imu.append(
                ImuSample(
                    ts_ms=int(_require(record, "ts_ms", lineno)),
                    a=_vec3(record, "a", lineno),
                    g=_vec3(record, "g", lineno),
                    m=_vec3(record, "m", lineno),
                )
            )
        else:
            raise SessionFormatError(f"line {lineno}: unknown record type {kind!r}")

    if meta is None:
        raise SessionFormatError("missing meta record")
    session = Session(meta=meta, cap=tuple(cap), imu=tuple(imu))
    violations = validate_session(session)
    if violations:
        raise SessionInvariantError("; ".join(violations))
    return session


# --- dataset manifests -------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str          # relative to the manifest's directory
    user_id: str
    label: str


def write_manifest(entries: Iterable[ManifestEntry], path: str | os.PathLike) -> None:
    data = [{"path": e.path, "user_id": e.user_id, "label": e.label} for e in entries]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise SessionFormatError("manifest must be a JSON array")
    entries = []
    for i, item in enumerate(data):
        for key in ("path", "user_id", "label"):
            if key not in item:
                raise SessionFormatError(f"manifest entry {i} missing {key!r}")
        entries.append(ManifestEntry(str(item["path"]), str(item["user_id"]), str(item["label"])))
    return entries


def manifest_session_path(manifest_path: str | os.PathLike, entry: ManifestEntry) -> Path:
    return Path(manifest_path).parent / entry.path
