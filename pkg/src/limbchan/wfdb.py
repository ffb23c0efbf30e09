"""Reader for PTB-style WFDB records: a text header plus a format-16 payload.

Only single-segment records with signal format 16 (little-endian 16-bit
two's complement, sample-interleaved) are accepted.
"""
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedHeader, TruncatedPayload, UnsupportedFormat, ZeroGain

# (class name, frames reported for the PTB subset, family, header key)
# MI rows are keyed by the "Acute infarction (localization)" text, the rest
# by "Reason for admission". The second infero-lateral row is the PTB
# header's truncated spelling and stays a separate class.
CLASS_TABLE = (
    ("Myocardial Infarction: inferior", 3222, "MI", "inferior"),
    ("Myocardial Infarction: antero-septal", 2855, "MI", "antero-septal"),
    ("Myocardial Infarction: infero-lateral", 1933, "MI", "infero-lateral"),
    ("Myocardial Infarction: anterior", 1685, "MI", "anterior"),
    ("Myocardial Infarction: antero-lateral", 1603, "MI", "antero-lateral"),
    ("Myocardial Infarction: no", 628, "MI", "no"),
    ("Myocardial Infarction: infero-postero-lateral", 573, "MI", "infero-postero-lateral"),
    ("Myocardial Infarction: postero-lateral", 185, "MI", "postero-lateral"),
    ("Myocardial Infarction: posterior", 148, "MI", "posterior"),
    ("Myocardial Infarction: infero-poster-lateral", 111, "MI", "infero-poster-lateral"),
    ("Myocardial Infarction: lateral", 111, "MI", "lateral"),
    ("Myocardial Infarction: infero-latera", 86, "MI", "infero-latera"),
    ("Myocardial Infarction: antero-septo-lateral", 74, "MI", "antero-septo-lateral"),
    ("Myocardial Infarction: infero-posterior", 12, "MI", "infero-posterior"),
    ("Bundle Branch Block", 623, "BBB", "bundle branch block"),
    ("Cardiomyopathy", 603, "cardiomyopathy", "cardiomyopathy"),
    ("Dysrhythmia", 411, "dysrhythmia", "dysrhythmia"),
    ("Valvular Heart Disease", 122, "valvular", "valvular heart disease"),
    ("Healthy Control", 3055, "healthy", "healthy control"),
)
CLASS_NAMES = tuple(row[0] for row in CLASS_TABLE)
HEALTHY = "Healthy Control"
UNKNOWN = "unknown"

_FAMILY = {row[0]: row[2] for row in CLASS_TABLE}
_MI_KEYS = {row[3]: row[0] for row in CLASS_TABLE if row[2] == "MI"}
_REASON_KEYS = {row[3]: row[0] for row in CLASS_TABLE if row[2] != "MI"}

LEAD_ALIASES = {
    "i": "I", "ii": "II", "iii": "III", "avr": "aVR", "avl": "aVL", "avf": "aVF",
    "v1": "V1", "v2": "V2", "v3": "V3", "v4": "V4", "v5": "V5", "v6": "V6",
    "vx": "vx", "vy": "vy", "vz": "vz",
}


def canonical_lead(name):
    """Map a header lead name (any case) to its standard spelling."""
    return LEAD_ALIASES.get(name.strip().lower(), name.strip())


@dataclass(frozen=True)
class SignalDescriptor:
    file_name: str
    format_code: int
    gain: float
    baseline: int
    lead_name: str
    units: str = ""
    adc_resolution: int = 0
    adc_zero: int = 0
    initial_value: int = 0
    checksum: int = 0
    block_size: int = 0


@dataclass(frozen=True)
class RecordHeader:
    record_name: str
    n_signals: int
    sampling_rate: float
    n_samples: int
    signals: tuple
    comments: tuple = ()

    @property
    def lead_names(self):
        return tuple(s.lead_name for s in self.signals)


@dataclass(frozen=True)
class DiagnosisLabel:
    class_name: str
    is_healthy: bool
    disease_family: str | None
    excluded: bool = False

    @classmethod
    def from_class_name(cls, name):
        if name not in _FAMILY:
            return cls(UNKNOWN, False, None, True)
        return cls(name, name == HEALTHY, _FAMILY[name])


@dataclass
class RawRecord:
    header: RecordHeader
    signal: np.ndarray  # (n_samples, n_signals) in mV
    label: DiagnosisLabel | None = None
    adc: np.ndarray | None = field(default=None, repr=False)


def _num(tok, kind, what):
    try:
        return kind(tok)
    except ValueError:
        raise MalformedHeader(f"non-numeric {what}: {tok!r}") from None


_GAIN_RE = re.compile(r"^([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)(?:\(([-+]?\d+)\))?(?:/(\S+))?$")
_FMT_RE = re.compile(r"^(\d+)")


def _parse_signal_line(line):
    tok = line.split()
    if len(tok) < 2:
        raise MalformedHeader(f"signal line needs at least 2 fields: {line!r}")
    m = _FMT_RE.match(tok[1])
    if not m:
        raise MalformedHeader(f"bad format field {tok[1]!r}")
    fmt = int(m.group(1))
    if fmt != 16 or m.group(0) != tok[1]:
        raise UnsupportedFormat(f"signal format {tok[1]!r} (only 16 is supported)")
    gain, baseline, units = 200.0, None, ""
    if len(tok) > 2:
        g = _GAIN_RE.match(tok[2])
        if not g:
            raise MalformedHeader(f"non-numeric gain: {tok[2]!r}")
        gain = float(g.group(1))
        baseline = int(g.group(2)) if g.group(2) is not None else None
        units = g.group(3) or ""
    ints = [_num(t, int, "signal field") for t in tok[3:8]]
    adc_res, adc_zero, init, checksum, block = (ints + [0] * 5)[:5]
    lead = " ".join(tok[8:]) if len(tok) > 8 else ""
    return SignalDescriptor(
        file_name=tok[0],
        format_code=fmt,
        gain=gain,
        baseline=adc_zero if baseline is None else baseline,
        lead_name=lead,
        units=units,
        adc_resolution=adc_res,
        adc_zero=adc_zero,
        initial_value=init,
        checksum=checksum,
        block_size=block,
    )


def parse_header(text):
    """Parse WFDB header text into a :class:`RecordHeader`."""
    if not text or not text.strip():
        raise MalformedHeader("empty header")
    comments = []
    lines = []
    for raw in text.splitlines():
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            comments.append(stripped[1:])
        else:
            lines.append(stripped)
    if not lines:
        raise MalformedHeader("no record line")
    rec = lines[0].split()
    if len(rec) < 4:
        raise MalformedHeader(f"record line needs name, signal count, rate and length: {lines[0]!r}")
    if "/" in rec[0]:
        raise UnsupportedFormat("multi-segment records are not supported")
    n_sig = _num(rec[1], int, "signal count")
    rate = _num(re.split(r"[/(]", rec[2])[0], float, "sampling rate")
    n_samples = _num(rec[3], int, "sample count")
    if n_sig < 1:
        raise MalformedHeader("record declares no signals")
    if rate <= 0:
        raise MalformedHeader(f"sampling rate must be positive, got {rate}")
    if n_samples < 0:
        raise MalformedHeader("negative sample count")
    sig_lines = lines[1:]
    if len(sig_lines) != n_sig:
        raise MalformedHeader(f"header declares {n_sig} signals but has {len(sig_lines)} descriptor lines")
    signals = tuple(_parse_signal_line(s) for s in sig_lines)
    names = [s.lead_name for s in signals]
    if len(set(names)) != len(names):
        raise MalformedHeader(f"duplicate lead names: {names}")
    return RecordHeader(rec[0], n_sig, rate, n_samples, signals, tuple(comments))


def _fmt_num(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def format_header(header):
    """Serialize a header back to WFDB text (inverse of :func:`parse_header`)."""
    out = [f"{header.record_name} {header.n_signals} {_fmt_num(header.sampling_rate)} {header.n_samples}"]
    for s in header.signals:
        gain = f"{_fmt_num(s.gain)}({s.baseline})"
        if s.units:
            gain += f"/{s.units}"
        fields = [s.file_name, str(s.format_code), gain, str(s.adc_resolution), str(s.adc_zero),
                  str(s.initial_value), str(s.checksum), str(s.block_size), s.lead_name]
        out.append(" ".join(fields).rstrip())
    out.extend("#" + c for c in header.comments)
    return "\n".join(out) + "\n"


def decode_adc(header, payload):
    """Raw ADC integers as an (n_samples, n_signals) int16 array."""
    n_sig = header.n_signals
    n_samples = header.n_samples
    if n_samples == 0:
        n_samples = len(payload) // (2 * n_sig)
    need = 2 * n_samples * n_sig
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, need {need}")
    return np.frombuffer(payload, dtype="<i2", count=n_samples * n_sig).reshape(n_samples, n_sig)


def read_signals(header, payload):
    """Decode a format-16 payload into physical units, ``(adc - baseline) / gain``."""
    for s in header.signals:
        if s.format_code != 16:
            raise UnsupportedFormat(f"signal format {s.format_code}")
        if s.gain == 0:
            raise ZeroGain(f"lead {s.lead_name!r} has zero gain")
    adc = decode_adc(header, payload)
    baseline = np.array([s.baseline for s in header.signals], dtype=np.float64)
    gain = np.array([s.gain for s in header.signals], dtype=np.float64)
    signal = (adc.astype(np.float64) - baseline) / gain
    return RawRecord(header=header, signal=signal, adc=adc)


def _comment_field(comments, key):
    key = key.lower()
    for c in comments:
        k, sep, v = c.partition(":")
        if sep and k.strip().lower() == key:
            return v.strip()
    return None


def extract_label(header):
    """Map diagnosis comments onto a reference class; anything else is excluded."""
    reason = _comment_field(header.comments, "reason for admission")
    if reason is None:
        return DiagnosisLabel(UNKNOWN, False, None, True)
    reason = reason.lower()
    if reason == "myocardial infarction":
        loc = _comment_field(header.comments, "acute infarction (localization)")
        name = _MI_KEYS.get((loc or "").lower())
    else:
        name = _REASON_KEYS.get(reason)
    if name is None:
        return DiagnosisLabel(UNKNOWN, False, None, True)
    return DiagnosisLabel.from_class_name(name)


def find_records(data_dir):
    """Header paths under ``data_dir`` in sorted order."""
    return sorted(Path(data_dir).rglob("*.hea"))


def load_record(header_path):
    """Read one record from disk, label attached."""
    header_path = Path(header_path)
    header = parse_header(header_path.read_text(encoding="utf-8", errors="replace"))
    files = {s.file_name for s in header.signals}
    if len(files) != 1:
        raise UnsupportedFormat("signals spread over several files")
    payload = (header_path.parent / files.pop()).read_bytes()
    rec = read_signals(header, payload)
    rec.label = extract_label(header)
    return rec
