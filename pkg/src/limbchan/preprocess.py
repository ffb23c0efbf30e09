"""Resampling, framing, per-frame normalization and lead selection."""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import ndimage, signal as sps

from .errors import EmptySignal, UnknownLead
from .wfdb import canonical_lead

LEADS_12 = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
TARGET_RATE = 64
FRAME_LEN = 192
CUTOFF_FRACTION = 0.45
STOPBAND_DB = 100.0


@dataclass(frozen=True)
class ChannelConfig:
    leads: tuple
    indices: tuple = ()

    @classmethod
    def resolve(cls, leads, available=LEADS_12):
        """Build a config, resolving lead names to column indices of ``available``."""
        if isinstance(leads, str):
            leads = [t for t in leads.replace(",", " ").split() if t]
        leads = tuple(canonical_lead(lead) for lead in leads)
        if not 1 <= len(leads) <= 12:
            raise ValueError(f"need between 1 and 12 leads, got {len(leads)}")
        if len(set(leads)) != len(leads):
            raise ValueError(f"duplicate leads in {leads}")
        avail = list(available)
        missing = [lead for lead in leads if lead not in avail]
        if missing:
            raise UnknownLead(f"unknown lead(s) {missing}; available: {avail}")
        return cls(leads, tuple(avail.index(lead) for lead in leads))

    def __len__(self):
        return len(self.leads)


@dataclass
class FrameDataset:
    data: np.ndarray  # (N, T, K)
    labels: list
    channel_names: tuple = LEADS_12
    sampling_rate: float = TARGET_RATE
    record_ids: list | None = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.channel_names = tuple(self.channel_names)
        if self.data.ndim != 3:
            raise ValueError(f"frame data must be (N, T, K), got {self.data.shape}")
        if len(self.labels) != self.data.shape[0]:
            raise ValueError("one label per frame required")
        if len(self.channel_names) != self.data.shape[2]:
            raise ValueError("one channel name per column required")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValueError("channel names must be unique")
        if self.record_ids is not None and len(self.record_ids) != len(self.labels):
            raise ValueError("one record id per frame required")
        if not np.isfinite(self.data).all():
            raise ValueError("frame data contains NaN or Inf")

    def __len__(self):
        return self.data.shape[0]

    @property
    def class_names(self):
        return [lab.class_name for lab in self.labels]

    @property
    def binary_targets(self):
        """1 for abnormal frames, 0 for healthy."""
        return np.array([0 if lab.is_healthy else 1 for lab in self.labels], dtype=np.int64)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return FrameDataset(
            self.data[idx],
            [self.labels[i] for i in idx],
            self.channel_names,
            self.sampling_rate,
            None if self.record_ids is None else [self.record_ids[i] for i in idx],
        )


def resampling_ratio(from_rate, to_rate):
    r = Fraction(to_rate).limit_denominator(10**6) / Fraction(from_rate).limit_denominator(10**6)
    return r.numerator, r.denominator


def design_lowpass(from_rate, to_rate):
    """Kaiser-windowed sinc taps at the upsampled rate.

    Cutoff sits at 0.45 of the target rate with the stopband starting at the
    target Nyquist frequency.
    """
    up, _ = resampling_ratio(from_rate, to_rate)
    fs_up = from_rate * up
    cutoff = CUTOFF_FRACTION * to_rate
    width = 2.0 * (0.5 * to_rate - cutoff)
    numtaps, beta = sps.kaiserord(STOPBAND_DB, width / (0.5 * fs_up))
    numtaps |= 1
    return sps.firwin(numtaps, cutoff, window=("kaiser", beta), fs=fs_up)


def downsample(signal, from_rate, to_rate):
    """Rational-rate resampling of a (T, K) or (T,) array along time.

    Output length is ``floor(T * to_rate / from_rate)``.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptySignal("cannot resample an empty signal")
    if not from_rate > to_rate > 0:
        raise ValueError(f"need from_rate > to_rate > 0, got {from_rate} -> {to_rate}")
    up, down = resampling_ratio(from_rate, to_rate)
    taps = design_lowpass(from_rate, to_rate)
    y = sps.resample_poly(x, up, down, axis=0, window=taps, padtype="line")
    n_out = (x.shape[0] * up) // down
    return y[:n_out]


def remove_baseline(signal, rate, window_s=0.6):
    """Subtract a moving-median baseline estimate per channel."""
    x = np.asarray(signal, dtype=np.float64)
    w = max(int(round(window_s * rate)) | 1, 1)
    size = (w,) + (1,) * (x.ndim - 1)
    return x - ndimage.median_filter(x, size=size, mode="nearest")


def frame(signal, frame_len=FRAME_LEN, stride=FRAME_LEN):
    """Contiguous windows starting at 0, stride, 2*stride, ...; the trailing
    partial window is dropped."""
    if frame_len < 1 or stride < 1:
        raise ValueError("frame_len and stride must be >= 1")
    x = np.asarray(signal)
    n = 0 if x.shape[0] < frame_len else (x.shape[0] - frame_len) // stride + 1
    return [x[i * stride : i * stride + frame_len].copy() for i in range(n)]


def normalize(frame_data, eps=1e-8):
    """Z-score each channel over the frame with the population std; flat
    channels become zeros."""
    x = np.asarray(frame_data, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    flat = sd < eps
    out = (x - mu) / np.where(flat, 1.0, sd)
    out[..., flat] = 0.0
    return out


def select_channels(dataset, config):
    """Restrict ``dataset`` to the leads of ``config``, in config order."""
    if not isinstance(config, ChannelConfig):
        config = ChannelConfig.resolve(config, dataset.channel_names)
    cfg = ChannelConfig.resolve(config.leads, dataset.channel_names)
    return FrameDataset(
        dataset.data[:, :, list(cfg.indices)],
        list(dataset.labels),
        cfg.leads,
        dataset.sampling_rate,
        None if dataset.record_ids is None else list(dataset.record_ids),
    )


def record_frames(record, target_rate=TARGET_RATE, frame_len=FRAME_LEN, stride=FRAME_LEN,
                  baseline=False):
    """Frames for one record restricted to the 12 standard leads."""
    names = [canonical_lead(n) for n in record.header.lead_names]
    try:
        cols = [names.index(lead) for lead in LEADS_12]
    except ValueError:
        raise UnknownLead(f"record {record.header.record_name} lacks a standard lead: {names}") from None
    x = record.signal[:, cols]
    x = downsample(x, record.header.sampling_rate, target_rate)
    if baseline:
        x = remove_baseline(x, target_rate)
    return [normalize(f) for f in frame(x, frame_len, stride)]


def build_dataset(records, target_rate=TARGET_RATE, frame_len=FRAME_LEN, stride=FRAME_LEN,
                  baseline=False):
    """Frame every usable record; records labelled unknown are skipped."""
    frames, labels, rec_ids = [], [], []
    for rec in records:
        label = rec.label
        if label is None or label.excluded:
            continue
        fs = record_frames(rec, target_rate, frame_len, stride, baseline)
        frames.extend(fs)
        labels.extend([label] * len(fs))
        rec_ids.extend([rec.header.record_name] * len(fs))
    data = np.stack(frames) if frames else np.zeros((0, frame_len, len(LEADS_12)))
    return FrameDataset(data, labels, LEADS_12, target_rate, rec_ids)
