"""Monte Carlo generation of detection events and time-tag streams.

Pair emission is a homogeneous Poisson process.  Each pair carries one
latent uniform draw; the joint four-way outcome is resolved from it once
the measurement bases are known, and only afterwards are the two photons
thinned independently by link transmission and detector efficiency.
Sampling the joint outcome before thinning keeps the port correlations
exact, so downstream error-rate estimators are unbiased.

Timestamps are integer picoseconds (jitter is sampled as a real Gaussian
and rounded) which keeps streams bit-exact across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .polmath import MeasBasis, NOMINAL_STATE, outcome_probs, single_arm_probs

PS_PER_S = 1_000_000_000_000

PTAG_MAGIC = b"PTAG1"
PTAG_RECORD = np.dtype([("det", "u1"), ("t", "<u8")])

# Shutter switch-over time; the fraction of a blinking window spent in
# the wrong state is transition / integration time.
SHUTTER_TRANSITION_S = 0.006


@dataclass
class SourceModel:
    pair_rate_hz: float = 1e5
    werner_p: float = 0.933

    def __post_init__(self):
        if self.pair_rate_hz <= 0:
            raise ValueError("pair_rate_hz must be positive")
        if not 0.0 <= self.werner_p <= 1.0:
            raise ValueError("werner_p must be in [0, 1]")


@dataclass
class DetectorModel:
    efficiency: float = 0.8
    jitter_sigma_ps: float = 70.0
    dark_rate_hz: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must be in (0, 1]")
        if self.jitter_sigma_ps < 0 or self.dark_rate_hz < 0:
            raise ValueError("jitter and dark rate must be non-negative")


@dataclass
class TimeTag:
    detector_id: str
    t_ps: int


@dataclass
class TagStream:
    """Time-ordered detection records of one user, columnar for speed."""

    t_ps: np.ndarray
    detector_ids: np.ndarray
    duration_ps: int
    detector_names: tuple[str, ...] = ("0", "1")

    def __post_init__(self):
        self.t_ps = np.asarray(self.t_ps, dtype=np.int64)
        self.detector_ids = np.asarray(self.detector_ids, dtype=np.uint8)
        if len(self.t_ps) != len(self.detector_ids):
            raise ValueError("timestamp and detector arrays must align")
        if len(self.t_ps) and (np.any(np.diff(self.t_ps) < 0)):
            raise ValueError("timestamps must be non-decreasing")
        if len(self.t_ps) and (self.t_ps[0] < 0 or self.t_ps[-1] > self.duration_ps):
            raise ValueError("timestamps must lie within [0, duration_ps]")

    def __len__(self) -> int:
        return len(self.t_ps)

    def __iter__(self):
        for t, d in zip(self.t_ps, self.detector_ids):
            yield TimeTag(self.detector_names[d], int(t))


@dataclass
class ShutterSchedule:
    mode: str = "open"
    period_ps: int = 0
    phase_ps: int = 0
    transition_ps: int = 0

    def __post_init__(self):
        if self.mode not in ("open", "closed", "blinking"):
            raise ValueError(f"unknown shutter mode {self.mode!r}")
        if self.mode == "blinking":
            if self.period_ps <= 0:
                raise ValueError("blinking needs a positive period")
            if not 0 <= self.transition_ps < self.period_ps:
                raise ValueError("transition must be shorter than the period")


@dataclass
class EmissionBatch:
    """Pair emission times plus one latent uniform per pair.

    The latent draw resolves the joint measurement outcome later without
    re-randomizing, so the same emission batch can be replayed against
    different channel settings.
    """

    t_ps: np.ndarray
    u_outcome: np.ndarray
    duration_ps: int

    def __len__(self) -> int:
        return len(self.t_ps)


def generate_pairs(src: SourceModel, duration_s: float, seed) -> EmissionBatch:
    """Poisson pair emissions over ``duration_s`` seconds."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    duration_ps = int(round(duration_s * PS_PER_S))
    n = rng.poisson(src.pair_rate_hz * duration_s)
    t = np.sort(rng.integers(0, duration_ps, size=n, dtype=np.int64))
    u = rng.random(n)
    return EmissionBatch(t_ps=t, u_outcome=u, duration_ps=duration_ps)


def _dark_tags(rng, det: DetectorModel, duration_ps: int, n_ports: int = 2):
    """Uniform Poisson background, independently per output port."""
    times, ports = [], []
    duration_s = duration_ps / PS_PER_S
    for port in range(n_ports):
        n = rng.poisson(det.dark_rate_hz * duration_s)
        times.append(rng.integers(0, duration_ps, size=n, dtype=np.int64))
        ports.append(np.full(n, port, dtype=np.uint8))
    return np.concatenate(times), np.concatenate(ports)


def _assemble_stream(t, ports, jitter_sigma, rng, det, duration_ps):
    if jitter_sigma > 0 and len(t):
        t = t + np.rint(rng.normal(0.0, jitter_sigma, size=len(t))).astype(np.int64)
    dark_t, dark_p = _dark_tags(rng, det, duration_ps)
    t = np.concatenate([t, dark_t])
    ports = np.concatenate([ports, dark_p])
    keep = (t >= 0) & (t <= duration_ps)
    t, ports = t[keep], ports[keep]
    order = np.argsort(t, kind="stable")
    return TagStream(t[order], ports[order], duration_ps)


def detect_pair_events(
    events: EmissionBatch,
    rho_effective: np.ndarray,
    basis_a: MeasBasis,
    basis_b: MeasBasis,
    det_a: DetectorModel,
    det_b: DetectorModel,
    loss_a: float = 1.0,
    loss_b: float = 1.0,
    seed=0,
    delay_a_ps: int = 0,
    delay_b_ps: int = 0,
) -> tuple[TagStream, TagStream]:
    """Turn pair emissions into two users' tag streams.

    Joint outcome per pair from the four-way port distribution, then
    independent survival thinning (link transmission times detector
    efficiency), Gaussian timestamp jitter, and a dark-count background
    on every detector.  ``delay_*_ps`` shift each arm's arrival times
    (propagation delay); tags pushed outside [0, duration] are dropped.
    """
    if not 0.0 < loss_a <= 1.0 or not 0.0 < loss_b <= 1.0:
        raise ValueError("arm transmissions must be probabilities in (0, 1]")
    rng = np.random.default_rng(seed)
    probs = outcome_probs(rho_effective, basis_a, basis_b)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    joint = np.searchsorted(cdf, events.u_outcome, side="right").astype(np.int8)
    port_a = (joint >> 1).astype(np.uint8)
    port_b = (joint & 1).astype(np.uint8)

    n = len(events)
    keep_a = rng.random(n) < loss_a * det_a.efficiency
    keep_b = rng.random(n) < loss_b * det_b.efficiency

    t_a = events.t_ps[keep_a] + delay_a_ps
    t_b = events.t_ps[keep_b] + delay_b_ps
    stream_a = _assemble_stream(
        t_a, port_a[keep_a], det_a.jitter_sigma_ps, rng, det_a, events.duration_ps
    )
    stream_b = _assemble_stream(
        t_b, port_b[keep_b], det_b.jitter_sigma_ps, rng, det_b, events.duration_ps
    )
    return stream_a, stream_b


def alternating_windows(
    duration_ps: int, window_ps: int, order=("HV", "DA"), phase_ps: int = 0
) -> list[tuple[int, int, str]]:
    """Synchronized basis schedule: consecutive windows cycling ``order``."""
    if window_ps <= 0:
        raise ValueError("window_ps must be positive")
    out = []
    start = phase_ps
    i = 0
    while start < duration_ps:
        end = min(start + window_ps, duration_ps)
        out.append((start, end, order[i % len(order)]))
        start = end
        i += 1
    return out


def reference_counts(
    state: np.ndarray,
    u: np.ndarray,
    basis: MeasBasis,
    mean_photons: float,
    seed=0,
    shot_noise: bool = True,
) -> np.ndarray:
    """Port counts for an attenuated reference beam through channel ``u``.

    Counts are independent Poisson draws around mean_photons times the
    port probabilities; with shot_noise=False the expectations themselves
    are returned (deterministic readout for expectation-mode analyses).
    """
    if mean_photons <= 0:
        raise ValueError("mean_photons must be positive")
    mu = mean_photons * single_arm_probs(state, u, basis)
    if not shot_noise:
        return mu
    rng = np.random.default_rng(seed)
    return rng.poisson(mu).astype(float)


def sync_error_from_integration(
    integration_s: float, transition_s: float = SHUTTER_TRANSITION_S
) -> float:
    """Fraction of a blinking window spent in the wrong basis state."""
    if integration_s <= 0:
        raise ValueError("integration_s must be positive")
    return min(transition_s / integration_s, 0.499)


def blinking_port_means(
    u: np.ndarray, mean_photons: float, sync_error: float
) -> tuple[np.ndarray, np.ndarray]:
    """Expected port counts of one blinking cycle (HV window, DA window).

    A fraction ``sync_error`` of each window's light is still the other
    window's nominal state, analyzed by the current window's analyzer.
    """
    from .polmath import BASES

    h_state, d_state = NOMINAL_STATE["HV"], NOMINAL_STATE["DA"]
    hv, da = BASES["HV"], BASES["DA"]
    mu_h = mean_photons * (
        (1.0 - sync_error) * single_arm_probs(h_state, u, hv)
        + sync_error * single_arm_probs(d_state, u, hv)
    )
    mu_d = mean_photons * (
        (1.0 - sync_error) * single_arm_probs(d_state, u, da)
        + sync_error * single_arm_probs(h_state, u, da)
    )
    return mu_h, mu_d


def blinking_counts(
    u: np.ndarray,
    integration_s: float,
    mean_rate: float,
    sync_error: float,
    seed=0,
    shot_noise: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Port counts of one blinking cycle: both bases, one window each."""
    if not 0.0 <= sync_error < 0.5:
        raise ValueError("sync_error must be in [0, 0.5)")
    mean_photons = mean_rate * integration_s
    mu_h, mu_d = blinking_port_means(u, mean_photons, sync_error)
    if not shot_noise:
        return mu_h, mu_d
    rng = np.random.default_rng(seed)
    return rng.poisson(mu_h).astype(float), rng.poisson(mu_d).astype(float)


def write_ptag(stream: TagStream, path, seed=None) -> None:
    """Write the binary record file plus its JSON sidecar.

    Format: the magic bytes PTAG1 followed by little-endian records of
    (uint8 detector id, uint64 picosecond timestamp).  The sidecar
    ``<path>.json`` holds duration, detector map and the generating seed.
    """
    path = Path(path)
    records = np.empty(len(stream), dtype=PTAG_RECORD)
    records["det"] = stream.detector_ids
    records["t"] = stream.t_ps.astype(np.uint64)
    with open(path, "wb") as fh:
        fh.write(PTAG_MAGIC)
        records.tofile(fh)
    sidecar = {
        "format": "PTAG1",
        "duration_ps": int(stream.duration_ps),
        "detectors": {str(i): name for i, name in enumerate(stream.detector_names)},
        "seed": seed,
        "n_tags": len(stream),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def read_ptag(path) -> TagStream:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(PTAG_MAGIC):
        raise ValueError(f"{path} is not a PTAG1 file (bad magic)")
    records = np.frombuffer(raw[len(PTAG_MAGIC):], dtype=PTAG_RECORD)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    names = tuple(
        sidecar["detectors"][k] for k in sorted(sidecar["detectors"], key=int)
    )
    return TagStream(
        t_ps=records["t"].astype(np.int64),
        detector_ids=records["det"].copy(),
        duration_ps=sidecar["duration_ps"],
        detector_names=names,
    )
