"""File formats: binary frame streams, trace CSV, annotation/feature JSON.

The frame container is a self-describing little-endian binary: a fixed
64-byte header (magic ``SCOS``) followed by row-major unsigned 16-bit
samples, one frame after another, so multi-gigabyte sessions stream with
bounded memory.  Text formats round-trip 64-bit floats exactly via
shortest-repr serialization.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
from typing import Iterator

import numpy as np

from .breathhold import BreathHoldAnnotation, FeatureSet
from .errors import AnnotationOutOfRange, FormatError
from .synth import GroundTruth
from .trace import AcquisitionConfig, Frame, FrameStream, HemodynamicTrace

MAGIC = b"SCOS"
FORMAT_VERSION = 1

#: magic, version, width, height, fps, bit_depth, gain_e_per_adu,
#: read_noise_e, dark_offset_adu, exposure_s, frame_count
_HEADER = struct.Struct("<4sHIIdHddddQ")
HEADER_SIZE = _HEADER.size

TRACE_COLUMNS = ("t_s", "mean_adu", "k_raw_sq", "k_adj_sq", "bfi", "bvi", "valid")


# ---------------------------------------------------------------------------
# frame stream container
# ---------------------------------------------------------------------------

def write_frame_stream(stream: FrameStream, path: str) -> int:
    """Write a stream to disk; returns the number of frames written."""
    config = stream.config
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        config.roi_width,
        config.roi_height,
        config.fps,
        config.bit_depth,
        config.gain,
        config.read_noise,
        config.dark_offset,
        config.exposure,
        len(stream),
    )
    count = 0
    with open(path, "wb", buffering=1024 * 1024) as fh:
        fh.write(header)
        for frame in stream:
            samples = np.ascontiguousarray(frame.samples, dtype="<u2")
            if samples.shape != config.frame_shape:
                raise FormatError(
                    f"frame {count} is {samples.shape}, header says {config.frame_shape}"
                )
            fh.write(samples.tobytes())
            count += 1
    if count != len(stream):
        raise FormatError(f"stream yielded {count} frames, header says {len(stream)}")
    return count


class FileFrameStream(FrameStream):
    """Lazy reader over a frame-stream file; re-iterable and streaming."""

    def __init__(self, path: str):
        self.path = path
        size = os.path.getsize(path)
        if size < HEADER_SIZE:
            raise FormatError(f"{path}: {size} bytes are too few for the {HEADER_SIZE}-byte header")
        with open(path, "rb") as fh:
            raw = fh.read(HEADER_SIZE)
        (
            magic,
            version,
            width,
            height,
            fps,
            bit_depth,
            gain,
            read_noise,
            dark_offset,
            exposure,
            frame_count,
        ) = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        expected = HEADER_SIZE + frame_count * width * height * 2
        if size != expected:
            raise FormatError(
                f"{path}: size mismatch, expected {expected} bytes for {frame_count} frames "
                f"of {width}x{height}, found {size} (payload ends at byte offset {size})"
            )
        self.config = AcquisitionConfig(
            fps=fps,
            bit_depth=bit_depth,
            gain=gain,
            read_noise=read_noise,
            dark_offset=dark_offset,
            exposure=exposure,
            roi_width=width,
            roi_height=height,
        )
        self.n_frames = int(frame_count)
        self._frame_bytes = width * height * 2

    def __iter__(self) -> Iterator[Frame]:
        shape = self.config.frame_shape
        dt = 1.0 / self.config.fps
        with open(self.path, "rb", buffering=4 * 1024 * 1024) as fh:
            fh.seek(HEADER_SIZE)
            for i in range(self.n_frames):
                buf = fh.read(self._frame_bytes)
                if len(buf) != self._frame_bytes:
                    raise FormatError(
                        f"{self.path}: short read in frame {i} at byte offset "
                        f"{HEADER_SIZE + i * self._frame_bytes + len(buf)}"
                    )
                samples = np.frombuffer(buf, dtype="<u2").reshape(shape)
                yield Frame(samples, i * dt)


def open_frame_stream(path: str) -> FileFrameStream:
    return FileFrameStream(path)


# ---------------------------------------------------------------------------
# trace CSV
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    """Shortest decimal that round-trips the exact float64; empty for NaN."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def write_trace_csv(trace: HemodynamicTrace, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for i in range(len(trace)):
            writer.writerow(
                [
                    _fmt(trace.t[i]),
                    _fmt(trace.mean_adu[i]),
                    _fmt(trace.k_raw_sq[i]),
                    _fmt(trace.k_adj_sq[i]),
                    _fmt(trace.bfi[i]),
                    _fmt(trace.bvi[i]),
                    int(bool(trace.valid[i])),
                ]
            )


def read_trace_csv(path: str) -> HemodynamicTrace:
    def parse(cell: str) -> float:
        return float(cell) if cell != "" else math.nan

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty trace CSV") from None
        if tuple(header) != TRACE_COLUMNS:
            raise FormatError(
                f"{path}: bad trace header {header}, expected {list(TRACE_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRACE_COLUMNS):
                raise FormatError(f"{path}: line {lineno}: expected {len(TRACE_COLUMNS)} cells")
            try:
                rows.append(
                    (
                        parse(row[0]),
                        parse(row[1]),
                        parse(row[2]),
                        parse(row[3]),
                        parse(row[4]),
                        parse(row[5]),
                        bool(int(row[6])),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: trace CSV has no data rows")
    cols = list(zip(*rows))
    return HemodynamicTrace(
        t=np.asarray(cols[0]),
        mean_adu=np.asarray(cols[1]),
        k_raw_sq=np.asarray(cols[2]),
        k_adj_sq=np.asarray(cols[3]),
        bfi=np.asarray(cols[4]),
        bvi=np.asarray(cols[5]),
        valid=np.asarray(cols[6], dtype=bool),
    )


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------

def _clean(obj):
    """Make a structure JSON-safe: arrays to lists, NaN to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _dump_json(doc: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(doc), fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: expected a JSON object at top level")
    return doc


def write_annotation(annotation: BreathHoldAnnotation, path: str) -> None:
    doc = {
        "t_start_s": annotation.t_start,
        "t_bh_s": annotation.t_bh,
        "subject_id": annotation.subject_id,
        "session_id": annotation.session_id,
        "risk_score": annotation.risk_score,
    }
    if annotation.sd_distance_cm is not None:
        doc["sd_distance_cm"] = annotation.sd_distance_cm
    _dump_json(doc, path)


def read_annotation(path: str) -> BreathHoldAnnotation:
    doc = _load_json(path)
    for key in ("t_start_s", "t_bh_s", "subject_id", "session_id"):
        if key not in doc:
            raise FormatError(f"{path}: annotation is missing required key {key!r}")
    try:
        return BreathHoldAnnotation(
            t_start=float(doc["t_start_s"]),
            t_bh=float(doc["t_bh_s"]),
            subject_id=str(doc["subject_id"]),
            session_id=str(doc["session_id"]),
            risk_score=None if doc.get("risk_score") is None else int(doc["risk_score"]),
            sd_distance_cm=(
                None if doc.get("sd_distance_cm") is None else float(doc["sd_distance_cm"])
            ),
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad annotation value ({exc})") from None
    except AnnotationOutOfRange as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_feature_set(fs: FeatureSet, path: str) -> None:
    doc = {
        "schema": "scoskit.features/1",
        "subject_id": fs.subject_id,
        "session_id": fs.session_id,
        "risk_score": fs.risk_score,
        "features": {
            name: {"value": fs.values.get(name), "valid": fs.valid.get(name, False)}
            for name in fs.values
        },
        "intermediate": fs.intermediate,
    }
    _dump_json(doc, path)


def read_feature_set(path: str) -> FeatureSet:
    doc = _load_json(path)
    if doc.get("schema") != "scoskit.features/1":
        raise FormatError(f"{path}: not a scoskit feature file (schema={doc.get('schema')!r})")
    feats = doc.get("features")
    if not isinstance(feats, dict):
        raise FormatError(f"{path}: missing features map")
    fs = FeatureSet(
        subject_id=str(doc.get("subject_id", "")),
        session_id=str(doc.get("session_id", "")),
        risk_score=None if doc.get("risk_score") is None else int(doc["risk_score"]),
        intermediate=doc.get("intermediate", {}) or {},
    )
    for name, entry in feats.items():
        if not isinstance(entry, dict) or "valid" not in entry:
            raise FormatError(f"{path}: feature {name!r} must carry value and valid")
        fs.set(name, entry.get("value"), bool(entry["valid"]))
    return fs


def write_ground_truth(truth: GroundTruth, path: str) -> None:
    doc = {
        "schema": "scoskit.ground_truth/1",
        "seed": truth.seed,
        "substep_mode": truth.substep_mode,
        "beta_effective": truth.beta_effective,
        "physics": truth.physics,
        "config": truth.config,
        "script": truth.script,
        "t_s": truth.t,
        "flow": truth.flow,
        "volume": truth.volume,
        "hr_bpm": truth.hr,
        "tau_c_s": truth.tau_c,
        "mean_e": truth.mean_e,
        "n_substeps": truth.n_substeps,
        "expected_k2": truth.expected_k2,
        "expected_bfi_rel": truth.expected_bfi_rel,
        "expected_bvi": truth.expected_bvi,
    }
    _dump_json(doc, path)


def read_ground_truth(path: str) -> GroundTruth:
    doc = _load_json(path)
    if doc.get("schema") != "scoskit.ground_truth/1":
        raise FormatError(f"{path}: not a ground-truth file")
    arr = lambda key: np.asarray(doc[key], dtype=np.float64)
    return GroundTruth(
        seed=int(doc["seed"]),
        substep_mode=str(doc["substep_mode"]),
        beta_effective=float(doc["beta_effective"]),
        physics=doc["physics"],
        config=doc["config"],
        script=doc["script"],
        t=arr("t_s"),
        flow=arr("flow"),
        volume=arr("volume"),
        hr=arr("hr_bpm"),
        tau_c=arr("tau_c_s"),
        mean_e=arr("mean_e"),
        n_substeps=np.asarray(doc["n_substeps"], dtype=np.int64),
        expected_k2=arr("expected_k2"),
        expected_bfi_rel=arr("expected_bfi_rel"),
        expected_bvi=arr("expected_bvi"),
    )


# ---------------------------------------------------------------------------
# flat key=value configuration text
# ---------------------------------------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment.

    Raises FormatError with the offending line number on anything that is
    not a comment, blank line, or key=value pair.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}: line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise FormatError(f"{source}: line {lineno}: empty key")
        if key in out:
            raise FormatError(f"{source}: line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out
