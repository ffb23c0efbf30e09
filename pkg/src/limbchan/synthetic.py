"""Desk-scale oracle datasets with known channel mixing.

Observed leads are sums of random-phase sinusoids; every other lead is a
fixed linear image of the observed ones (plus optional noise), so an ideal
imputer has zero error when the noise is zero.

Class structure lives in observed space around a unit direction ``u``:

* the observed background is shrunk along ``u`` by ``background_u``;
* the mixing row of ``evidence_lead`` is ``evidence_gain * u``, so that lead
  shows the ``u`` component cleanly while each raw observed lead buries it
  under the other background directions;
* disease bumps are ``bump_shared * u +/- bump_specific * v`` with ``v``
  orthogonal to ``u``; consecutive disease classes flip the sign of ``v``,
  and the remaining missing leads carry no ``v``.

A classifier trained on one disease against healthy frames can key on
either component. Only the shared one transfers to the other disease, and
it is prominent only in the completed 12-lead view.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .preprocess import LEADS_12, TARGET_RATE, ChannelConfig, FrameDataset
from .wfdb import DiagnosisLabel

TRAINED_CLASS = "Myocardial Infarction: inferior"
HELD_OUT_CLASS = "Myocardial Infarction: posterior"
HEALTHY_CLASS = "Healthy Control"


@dataclass
class SyntheticSpec:
    n_frames: int = 512
    T: int = 192
    K: int = 12
    leads: tuple = ("II", "III", "aVF")
    n_sinusoids: int = 5
    freq_range: tuple = (0.5, 4.0)
    noise: float = 0.0
    # fraction of frames per class; the remainder is healthy
    class_fractions: dict = field(default_factory=lambda: {TRAINED_CLASS: 0.5})
    evidence_lead: str = "V2"
    evidence_gain: float = 8.0
    bump_shared: float = 0.6
    bump_specific: float = 1.5
    bump_width: float = 0.12  # seconds
    # background std along u relative to the other observed directions
    background_u: float = 0.15
    seed: int = 0
    mixing: np.ndarray | None = None

    def validate(self):
        if self.n_frames < 1 or self.T < 1:
            raise InvalidSpec("n_frames and T must be positive")
        if self.K != len(LEADS_12):
            raise InvalidSpec("synthetic frames use the 12 standard leads")
        if not 1 <= len(self.leads) <= self.K:
            raise InvalidSpec("observed lead count must be between 1 and K")
        if not 0 < self.background_u <= 1:
            raise InvalidSpec("background_u must be in (0, 1]")
        if self.noise < 0:
            raise InvalidSpec("noise level must be >= 0")
        if not 1 <= self.n_sinusoids <= 5:
            raise InvalidSpec("observed leads are sums of 1 to 5 sinusoids")
        if sum(self.class_fractions.values()) > 1.0 + 1e-12 or any(v < 0 for v in self.class_fractions.values()):
            raise InvalidSpec("class fractions must be nonnegative and sum to at most 1")
        k_obs = len(self.leads)
        if self.mixing is not None:
            m = np.asarray(self.mixing, dtype=np.float64)
            if m.shape != (self.K - k_obs, k_obs) or not np.isfinite(m).all():
                raise InvalidSpec(f"mixing matrix must be finite with shape {(self.K - k_obs, k_obs)}")
        if self.class_fractions and self.evidence_lead in self.leads:
            raise InvalidSpec("evidence lead must be a missing lead")

    @property
    def observed_variance(self):
        """Analytic per-sample variance of each observed lead (healthy frames)."""
        u = synthetic_structure(self)["u"]
        return 1.0 - (1.0 - self.background_u**2) * u**2


def _bump_directions(u, rng, k_obs):
    """Two orthonormal directions orthogonal to ``u`` (fewer when k_obs < 3)."""
    basis = [u]
    out = []
    for _ in range(k_obs - 1):
        v = rng.normal(size=k_obs)
        for b in basis:
            v -= (v @ b) * b
        v /= np.linalg.norm(v)
        basis.append(v)
        out.append(v)
    return out


def make_synthetic_dataset(spec=None):
    """Generate a labelled 12-lead :class:`FrameDataset` from ``spec``.

    The mixing matrix and bump directions come from
    :func:`synthetic_structure` with the same spec.
    """
    spec = spec or SyntheticSpec()
    spec.validate()
    st = synthetic_structure(spec)
    rng = np.random.default_rng([spec.seed, 1])
    N, T = spec.n_frames, spec.T
    cfg = ChannelConfig.resolve(spec.leads)
    k_obs = len(cfg)
    missing = [i for i in range(spec.K) if i not in cfg.indices]
    t = np.arange(T) / TARGET_RATE

    amp = np.sqrt(2.0 / spec.n_sinusoids)
    f = rng.uniform(*spec.freq_range, size=(N, k_obs, spec.n_sinusoids))
    ph = rng.uniform(0.0, 2 * np.pi, size=(N, k_obs, spec.n_sinusoids))
    obs = amp * np.sin(2 * np.pi * f[..., None] * t + ph[..., None]).sum(axis=2)  # (N, k_obs, T)
    obs = obs.transpose(0, 2, 1) @ st["shaping"]

    counts = {}
    remaining = N
    for name, frac in spec.class_fractions.items():
        counts[name] = int(round(frac * N))
        remaining -= counts[name]
    if remaining < 0:
        raise InvalidSpec("class fractions exceed the frame count")
    names = [HEALTHY_CLASS] * remaining
    for name, c in counts.items():
        names += [name] * c
    order = rng.permutation(N)
    names = [names[i] for i in order]

    width = spec.bump_width * TARGET_RATE
    for n, name in enumerate(names):
        direction = st["class_directions"].get(name)
        if direction is None:
            continue
        center = rng.uniform(0.2 * T, 0.8 * T)
        wave = np.exp(-0.5 * ((np.arange(T) - center) / width) ** 2)
        obs[n] += wave[:, None] * direction[None, :]

    data = np.zeros((N, T, spec.K))
    data[:, :, list(cfg.indices)] = obs
    data[:, :, missing] = obs @ st["mixing"].T
    if spec.noise > 0:
        data[:, :, missing] += spec.noise * rng.normal(size=(N, T, len(missing)))
    labels = [DiagnosisLabel.from_class_name(n) for n in names]
    return FrameDataset(data, labels, LEADS_12, TARGET_RATE, [f"syn{n:05d}" for n in range(N)])


def synthetic_structure(spec):
    """Mixing matrix and per-class bump directions implied by ``spec``."""
    cfg = ChannelConfig.resolve(spec.leads)
    k_obs = len(cfg)
    missing = [LEADS_12[i] for i in range(spec.K) if i not in cfg.indices]
    rng = np.random.default_rng([spec.seed, 0])
    u = rng.normal(size=k_obs)
    u /= np.linalg.norm(u)
    others = _bump_directions(u, rng, k_obs)
    v = others[0] if others else np.zeros(k_obs)
    if spec.mixing is not None:
        mixing = np.asarray(spec.mixing, dtype=np.float64).copy()
    else:
        # the other missing leads carry no v, so the class-specific component
        # is visible only in the observed leads
        mixing = rng.normal(size=(spec.K - k_obs, k_obs)) / np.sqrt(k_obs)
        mixing -= np.outer(mixing @ v, v)
        if spec.evidence_lead in missing:
            mixing[missing.index(spec.evidence_lead)] = spec.evidence_gain * u
    directions = {}
    diseases = [c for c in spec.class_fractions if c != HEALTHY_CLASS]
    for i, name in enumerate(diseases):
        # consecutive diseases share the u component and flip the specific one
        sign = 1.0 if i % 2 == 0 else -1.0
        directions[name] = spec.bump_shared * u + sign * spec.bump_specific * v
    shaping = np.eye(k_obs) - (1.0 - spec.background_u) * np.outer(u, u)
    return {"mixing": mixing, "u": u, "shaping": shaping, "class_directions": directions, "missing_leads": missing}
