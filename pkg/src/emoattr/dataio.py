"""On-disk formats: CSV manifests, binary feature tables, JSON model bundles,
and PCM WAV input.

Every reader turns malformed input into :class:`FormatError` carrying the
file and, where meaningful, the line, row or field at fault.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import wave
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import SPLITS, LabeledFeatures
from .emotions import DEFAULT_EMOTIONS, EmotionPair, all_pairs, canonical
from .errors import EmoAttrError, FormatError
from .evaluation import ProbeClassifier, ProbeConfig
from .features import FEATURE_DIM, AudioClip
from .ranking import RankModel, SolverConfig

FORMAT_VERSION = 1
MANIFEST_HEADER = ("utterance_id", "path", "speaker", "emotion", "split")
VERSION_COMMENT = f"# emoattr format_version={FORMAT_VERSION}"


# --- manifests -------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    utterance_id: str
    path: str
    speaker: str
    emotion: str
    split: str


@dataclass
class Manifest:
    rows: list
    emotions: tuple = DEFAULT_EMOTIONS
    source: str = ""

    def __len__(self):
        return len(self.rows)

    @property
    def ids(self) -> list[str]:
        return [r.utterance_id for r in self.rows]

    def labeled(self, table: "FeatureTable") -> LabeledFeatures:
        """Attach manifest labels to a row-aligned feature table."""
        if table.rows != len(self.rows):
            raise FormatError(
                f"feature table has {table.rows} rows but manifest has {len(self.rows)}", table.source or None
            )
        return LabeledFeatures(
            features=table.values.astype(np.float64),
            labels=np.array([r.emotion for r in self.rows], dtype=object),
            splits=np.array([r.split for r in self.rows], dtype=object),
            ids=self.ids,
            name=os.path.basename(self.source) or "manifest",
            speakers=[r.speaker for r in self.rows],
        )


def _check_version_comment(line: str, location: str):
    text = line.lstrip("#").strip()
    if text.startswith("emoattr format_version="):
        version = text.split("=", 1)[1].strip()
        if version != str(FORMAT_VERSION):
            raise FormatError(f"unsupported format_version {version!r}", location)


def _read_text(path) -> str:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror or exc}", str(path)) from None
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not valid UTF-8 (byte offset {exc.start})", str(path)) from None


def parse_manifest(text: str, emotions: Sequence[str] = DEFAULT_EMOTIONS, source: str = "<manifest>") -> Manifest:
    reader = csv.reader(io.StringIO(text, newline=""))
    rows, seen = [], {}
    header_seen = False
    try:
        for record in reader:
            line = reader.line_num
            loc = f"{source}:{line}"
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if record[0].startswith("#"):
                _check_version_comment(",".join(record), loc)
                continue
            if not header_seen:
                if tuple(c.strip() for c in record) != MANIFEST_HEADER:
                    raise FormatError(f"expected header {','.join(MANIFEST_HEADER)}, got {','.join(record)}", loc)
                header_seen = True
                continue
            if len(record) != len(MANIFEST_HEADER):
                raise FormatError(f"expected {len(MANIFEST_HEADER)} fields, got {len(record)}", loc)
            uid, path, speaker, emotion, split = (c.strip() for c in record)
            if not uid:
                raise FormatError("empty utterance_id", loc)
            if uid in seen:
                raise FormatError(f"duplicate utterance_id {uid!r} (first seen on line {seen[uid]})", loc)
            try:
                emotion = canonical(emotion, emotions)
            except EmoAttrError:
                raise FormatError(f"unknown emotion {emotion!r} for {uid!r}", loc) from None
            if split not in SPLITS:
                raise FormatError(f"unknown split {split!r} for {uid!r}; expected one of {', '.join(SPLITS)}", loc)
            seen[uid] = line
            rows.append(ManifestRow(uid, path, speaker, emotion, split))
    except csv.Error as exc:
        raise FormatError(f"CSV parse error: {exc}", f"{source}:{reader.line_num}") from None
    if not header_seen:
        raise FormatError("empty manifest (no header)", source)
    if not rows:
        raise FormatError("manifest has a header but no rows", source)
    return Manifest(rows, tuple(emotions), source)


def load_manifest(path, emotions: Sequence[str] = DEFAULT_EMOTIONS) -> Manifest:
    return parse_manifest(_read_text(path), emotions, str(path))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], version: bool = True):
    """Write a headed CSV, preceded by the format-version comment."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if version:
            fh.write(VERSION_COMMENT + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def write_manifest(path, manifest: Manifest):
    write_csv(
        path,
        MANIFEST_HEADER,
        ((r.utterance_id, r.path, r.speaker, r.emotion, r.split) for r in manifest.rows),
    )


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by :func:`write_csv`."""
    lines = [l for l in _read_text(path).splitlines() if not l.startswith("#")]
    records = list(csv.reader(lines))
    if not records:
        raise FormatError("empty CSV", str(path))
    return records[0], records[1:]


# --- feature tables --------------------------------------------------------

FEATURE_MAGIC = b"EMOFEAT\x00"
_FEATURE_HEADER = struct.Struct("<8sIQI")  # magic, version, rows, dim


@dataclass
class FeatureTable:
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise FormatError(f"feature table must be 2-D, got shape {arr.shape}")
        self.values = np.ascontiguousarray(arr, dtype="<f4")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        return isinstance(other, FeatureTable) and self.values.tobytes() == other.values.tobytes() and (
            self.values.shape == other.values.shape
        )


def write_features(path, table: FeatureTable):
    if not isinstance(table, FeatureTable):
        table = FeatureTable(table)
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, table.rows, table.dim))
        fh.write(table.values.tobytes(order="C"))


def read_features(path, expected_dim: Optional[int] = FEATURE_DIM) -> FeatureTable:
    loc = str(path)
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror or exc}", loc) from None
    if len(blob) < _FEATURE_HEADER.size:
        raise FormatError(f"truncated header ({len(blob)} of {_FEATURE_HEADER.size} bytes)", loc)
    magic, version, rows, dim = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError("bad magic bytes; not an emoattr feature file", loc)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version}", loc)
    if dim == 0:
        raise FormatError("dimension header is 0", loc)
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(f"dimension header {dim} does not match expected {expected_dim}", loc)
    payload = len(blob) - _FEATURE_HEADER.size
    if payload != rows * dim * 4:
        kind = "truncated" if payload < rows * dim * 4 else "trailing bytes in"
        raise FormatError(f"{kind} data: {payload} bytes for {rows} x {dim} float32 values", loc)
    values = np.frombuffer(blob, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(rows, dim).copy()
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = bad[0]
        raise FormatError(f"non-finite value at row {r}, column {c}", loc)
    return FeatureTable(values, source=loc)


# --- model bundles ---------------------------------------------------------


@dataclass
class ModelBundle:
    emotions: tuple
    models: list
    probe: Optional[ProbeClassifier] = None
    provenance: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def model_for(self, a: str, b: str) -> RankModel:
        key = frozenset((a, b))
        for m in self.models:
            if m.pair.key() == key:
                return m
        raise KeyError((a, b))


def _floats(arr) -> list:
    return [float(v) for v in np.asarray(arr, dtype=np.float64).ravel()]


def _model_record(m: RankModel) -> dict:
    return {
        "high": m.pair.high,
        "low": m.pair.low,
        "weights": _floats(m.weights),
        "score_min": float(m.score_min),
        "score_max": float(m.score_max),
        "standardization": None if m.mean is None else {"mean": _floats(m.mean), "std": _floats(m.std)},
        "config": {
            "C": float(m.config.C),
            "grad_tol": float(m.config.grad_tol),
            "max_newton_iters": int(m.config.max_newton_iters),
            "standardize": bool(m.config.standardize),
            "seed": int(m.config.seed),
        },
        "final_objective": float(m.final_objective),
        "converged": bool(m.converged),
        "iterations": int(m.iterations),
    }


def _probe_record(p: ProbeClassifier) -> dict:
    return {
        "class_order": list(p.class_order),
        "weights": [_floats(row) for row in p.weights],
        "biases": _floats(p.biases),
        "standardization": None if p.mean is None else {"mean": _floats(p.mean), "std": _floats(p.std)},
        "training_config": {
            "learning_rate": float(p.config.learning_rate),
            "epochs": int(p.config.epochs),
            "l2": float(p.config.l2),
            "seed": int(p.config.seed),
            "standardize": bool(p.config.standardize),
        },
        "final_loss": float(p.loss_history[-1]) if p.loss_history else None,
        "diverged": bool(p.diverged),
    }


def bundle_to_json(bundle: ModelBundle) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "emotions": list(bundle.emotions),
        "models": [_model_record(m) for m in bundle.models],
        "probe": None if bundle.probe is None else _probe_record(bundle.probe),
        "provenance": bundle.provenance,
    }
    return json.dumps(doc, indent=1, allow_nan=False)


def save_bundle(path, bundle: ModelBundle):
    _validate_pairs(bundle.emotions, bundle.models, str(path))
    text = bundle_to_json(bundle)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


class _Reader:
    """Typed field access that reports the JSON path of any problem."""

    def __init__(self, source: str):
        self.source = source

    def fail(self, where: str, msg: str):
        raise FormatError(msg, f"{self.source}:{where}")

    def get(self, obj, key, where):
        if not isinstance(obj, dict):
            self.fail(where, "expected an object")
        if key not in obj:
            self.fail(f"{where}.{key}" if where else key, "missing field")
        return obj[key]

    def number(self, obj, key, where) -> float:
        v = self.get(obj, key, where)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(f"{where}.{key}", f"expected a finite number, got {type(v).__name__}")
        return float(v)

    def integer(self, obj, key, where) -> int:
        v = self.get(obj, key, where)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"{where}.{key}", "expected an integer")
        return v

    def boolean(self, obj, key, where) -> bool:
        v = self.get(obj, key, where)
        if not isinstance(v, bool):
            self.fail(f"{where}.{key}", "expected true/false")
        return v

    def string(self, obj, key, where) -> str:
        v = self.get(obj, key, where)
        if not isinstance(v, str):
            self.fail(f"{where}.{key}", "expected a string")
        return v

    def vector(self, obj, key, where, length=None) -> np.ndarray:
        return self.as_vector(self.get(obj, key, where), f"{where}.{key}", length)

    def as_vector(self, v, where, length=None) -> np.ndarray:
        ok = isinstance(v, list) and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in v
        )
        if not ok:
            self.fail(where, "expected a list of finite numbers")
        if length is not None and len(v) != length:
            self.fail(where, f"expected {length} values, got {len(v)}")
        if not v:
            self.fail(where, "empty vector")
        return np.array(v, dtype=np.float64)


def _read_standardization(r: _Reader, rec, where, dim):
    st = r.get(rec, "standardization", where)
    if st is None:
        return None, None
    mean = r.vector(st, "mean", f"{where}.standardization", dim)
    std = r.vector(st, "std", f"{where}.standardization", dim)
    if np.any(std <= 0):
        r.fail(f"{where}.standardization.std", "standard deviations must be positive")
    return mean, std


def _read_model(r: _Reader, rec, where, emotions) -> RankModel:
    high, low = r.string(rec, "high", where), r.string(rec, "low", where)
    for e in (high, low):
        if e not in emotions:
            r.fail(where, f"emotion {e!r} not in bundle emotion set")
    if high == low:
        r.fail(where, "pair with identical emotions")
    weights = r.vector(rec, "weights", where)
    mean, std = _read_standardization(r, rec, where, weights.size)
    cfg = r.get(rec, "config", where)
    try:
        config = SolverConfig(
            C=r.number(cfg, "C", f"{where}.config"),
            grad_tol=r.number(cfg, "grad_tol", f"{where}.config"),
            max_newton_iters=r.integer(cfg, "max_newton_iters", f"{where}.config"),
            standardize=r.boolean(cfg, "standardize", f"{where}.config"),
            seed=r.integer(cfg, "seed", f"{where}.config"),
        )
    except EmoAttrError as exc:
        if isinstance(exc, FormatError):
            raise
        r.fail(f"{where}.config", str(exc))
    lo, hi = r.number(rec, "score_min", where), r.number(rec, "score_max", where)
    if not lo < hi:
        r.fail(where, f"score_min {lo!r} must be below score_max {hi!r}")
    return RankModel(
        pair=EmotionPair(high, low),
        weights=weights,
        score_min=lo,
        score_max=hi,
        config=config,
        mean=mean,
        std=std,
        final_objective=r.number(rec, "final_objective", where),
        converged=r.boolean(rec, "converged", where),
        iterations=r.integer(rec, "iterations", where),
    )


def _read_probe(r: _Reader, rec, emotions) -> ProbeClassifier:
    where = "probe"
    order = r.get(rec, "class_order", where)
    if not isinstance(order, list) or not all(isinstance(e, str) and e in emotions for e in order):
        r.fail(f"{where}.class_order", "expected a list of bundle emotions")
    if len(set(order)) != len(order) or len(order) < 2:
        r.fail(f"{where}.class_order", "class order must list at least two distinct emotions")
    rows = r.get(rec, "weights", where)
    if not isinstance(rows, list) or len(rows) != len(order):
        r.fail(f"{where}.weights", f"expected {len(order)} weight rows")
    W_rows = [r.as_vector(row, f"{where}.weights[{i}]") for i, row in enumerate(rows)]
    if len({w.size for w in W_rows}) != 1:
        r.fail(f"{where}.weights", "weight rows must have equal length")
    W = np.vstack(W_rows)
    b = r.vector(rec, "biases", where, len(order))
    mean, std = _read_standardization(r, rec, where, W.shape[1])
    tc = r.get(rec, "training_config", where)
    try:
        config = ProbeConfig(
            learning_rate=r.number(tc, "learning_rate", f"{where}.training_config"),
            epochs=r.integer(tc, "epochs", f"{where}.training_config"),
            l2=r.number(tc, "l2", f"{where}.training_config"),
            seed=r.integer(tc, "seed", f"{where}.training_config"),
            standardize=r.boolean(tc, "standardize", f"{where}.training_config"),
        )
    except EmoAttrError as exc:
        if isinstance(exc, FormatError):
            raise
        r.fail(f"{where}.training_config", str(exc))
    return ProbeClassifier(W, b, tuple(order), config, mean, std, (), r.boolean(rec, "diverged", where))


def _validate_pairs(emotions, models, source):
    expected = {p.key(): p for p in all_pairs(emotions)}
    found = {}
    for m in models:
        k = m.pair.key()
        if k not in expected:
            raise FormatError(f"model for pair {m.pair} outside emotion set", source)
        if k in found:
            raise FormatError(f"duplicate model for pair ({m.pair.high}, {m.pair.low})", source)
        found[k] = m
    missing = [expected[k] for k in expected if k not in found]
    if missing:
        names = ", ".join(f"({p.high}, {p.low})" for p in missing)
        raise FormatError(f"missing pair model(s): {names}", source)
    dims = {m.dim for m in models}
    if len(dims) > 1:
        raise FormatError(f"models disagree on feature dimension: {sorted(dims)}", source)


def parse_bundle(text: str, source: str = "<bundle>") -> ModelBundle:
    r = _Reader(source)
    try:
        doc = json.loads(text, parse_constant=lambda c: r.fail("", f"non-finite constant {c} not allowed"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", f"{source}:{exc.lineno}:{exc.colno}") from None
    except RecursionError:
        raise FormatError("JSON nested too deeply", source) from None
    if not isinstance(doc, dict):
        r.fail("", "top level must be an object")
    version = r.get(doc, "format_version", "")
    if version != FORMAT_VERSION or isinstance(version, bool):
        r.fail("format_version", f"unsupported format_version {version!r}")
    emotions = r.get(doc, "emotions", "")
    if not isinstance(emotions, list) or not all(isinstance(e, str) and e for e in emotions):
        r.fail("emotions", "expected a list of emotion names")
    if len(set(emotions)) != len(emotions) or len(emotions) < 2:
        r.fail("emotions", "need at least two distinct emotions")
    records = r.get(doc, "models", "")
    if not isinstance(records, list):
        r.fail("models", "expected a list")
    models = [_read_model(r, rec, f"models[{i}]", emotions) for i, rec in enumerate(records)]
    _validate_pairs(emotions, models, source)
    probe_rec = doc.get("probe")
    probe = None if probe_rec is None else _read_probe(r, probe_rec, emotions)
    if probe is not None and models and probe.dim != models[0].dim:
        r.fail("probe.weights", "probe dimension differs from ranking models")
    provenance = doc.get("provenance") or {}
    if not isinstance(provenance, dict):
        r.fail("provenance", "expected an object")
    return ModelBundle(tuple(emotions), models, probe, provenance, version)


def load_bundle(path) -> ModelBundle:
    return parse_bundle(_read_text(path), str(path))


def provenance(**extra) -> dict:
    out = {"created": datetime.now(timezone.utc).isoformat(timespec="seconds"), "format_version": FORMAT_VERSION}
    out.update(extra)
    return out


# --- audio -----------------------------------------------------------------


def read_wav(path) -> AudioClip:
    """Mono 16-bit PCM WAV as an :class:`AudioClip` scaled to [-1, 1)."""
    loc = str(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            if wf.getcomptype() != "NONE":
                raise FormatError(f"compressed WAV ({wf.getcomptype()}) not supported", loc)
            if channels != 1:
                raise FormatError(f"WAV has {channels} channels; mono required", loc)
            if width != 2:
                raise FormatError(f"WAV sample width {8 * width} bit; 16-bit PCM required", loc)
            frames = wf.readframes(wf.getnframes())
    except FormatError:
        raise
    # the stdlib chunk reader raises bare RuntimeError/ValueError on bad sizes
    except (wave.Error, EOFError, struct.error, RuntimeError, ValueError, OverflowError) as exc:
        raise FormatError(f"malformed WAV: {exc}", loc) from None
    except OSError as exc:
        raise FormatError(f"cannot read WAV: {exc.strerror or exc}", loc) from None
    if len(frames) < 2:
        raise FormatError("WAV contains no samples", loc)
    samples = np.frombuffer(frames[: len(frames) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    try:
        return AudioClip(samples, rate)
    except EmoAttrError as exc:
        raise FormatError(str(exc), loc) from None


def write_wav(path, clip: AudioClip):
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())
