"""Estimation on tag streams: correlation histograms, delay recovery,
coincidence tallies, error rate, visibility and the derived fidelity
figures.

The error rate of a link is read off a temporal cross-correlation
histogram: the histogram peak gives the inter-user delay, coincidences
inside a window around that delay are sifted by basis and tallied into
same-port / cross-port counts.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .photostream import TagStream

# Network error-rate budget excluding polarization alignment: the 3.35%
# calibration average minus the 0.91% alignment share of the manual
# scheme.  Used when turning an alignment contribution into an estimated
# entanglement fidelity.
NON_POLARIZATION_QBER = 0.0244

# Positive secret key rates require staying below this error rate.
QBER_SECURITY_THRESHOLD = 0.11

DEFAULT_BIN_WIDTH_PS = 50
DEFAULT_COINCIDENCE_WINDOW_PS = 500
DEFAULT_MAX_OFFSET_PS = 2_000_000

_CHUNK = 1 << 16


class DelayNotFound(Exception):
    """No statistically significant correlation peak in the histogram."""


@dataclass
class Estimate:
    value: float
    stderr: float

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr}


@dataclass
class CorrelationHistogram:
    bin_width_ps: int
    offsets_ps: np.ndarray  # bin centers
    counts: np.ndarray

    def __post_init__(self):
        self.offsets_ps = np.asarray(self.offsets_ps, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.offsets_ps) != len(self.counts):
            raise ValueError("offset and count arrays must align")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")


@dataclass
class DelayEstimate:
    offset_ps: float
    confidence: float


@dataclass
class CoincidenceTally:
    n_same_hv: int = 0
    n_diff_hv: int = 0
    n_same_da: int = 0
    n_diff_da: int = 0

    @property
    def total(self) -> int:
        return self.n_same_hv + self.n_diff_hv + self.n_same_da + self.n_diff_da


def cross_correlate(
    a: TagStream,
    b: TagStream,
    bin_width_ps: int = DEFAULT_BIN_WIDTH_PS,
    max_offset_ps: int = DEFAULT_MAX_OFFSET_PS,
) -> CorrelationHistogram:
    """Histogram of (t_b - t_a) over all tag pairs within +-max_offset_ps.

    Bins are centered on multiples of the bin width, so an exact delay d
    lands in the bin whose center is the nearest multiple of the width.
    """
    if bin_width_ps <= 0:
        raise ValueError("bin_width_ps must be positive")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("cannot correlate an empty stream")
    k = int(max_offset_ps // bin_width_ps)
    counts = np.zeros(2 * k + 1, dtype=np.int64)
    ta, tb = a.t_ps, b.t_ps
    half = bin_width_ps * (k + 0.5)
    for start in range(0, len(ta), _CHUNK):
        chunk = ta[start:start + _CHUNK]
        lo = np.searchsorted(tb, chunk - max_offset_ps, side="left")
        hi = np.searchsorted(tb, chunk + max_offset_ps, side="right")
        reps = hi - lo
        if reps.sum() == 0:
            continue
        base = np.repeat(chunk, reps)
        idx = np.repeat(lo, reps) + _running_ranges(reps)
        diffs = tb[idx] - base
        bins = np.rint(diffs / bin_width_ps).astype(np.int64)
        # diffs can round to |k+1| right at the edge of the search window
        bins = bins[np.abs(diffs) <= half]
        bins = np.clip(bins, -k, k)
        counts += np.bincount(bins + k, minlength=2 * k + 1)
    offsets = (np.arange(-k, k + 1) * bin_width_ps).astype(np.int64)
    return CorrelationHistogram(bin_width_ps, offsets, counts)


def _running_ranges(reps: np.ndarray) -> np.ndarray:
    """[0..reps[0]-1, 0..reps[1]-1, ...] without a Python loop."""
    total = int(reps.sum())
    ends = np.cumsum(reps)
    starts = ends - reps
    out = np.arange(total)
    out -= np.repeat(starts, reps)
    return out


def merge_histograms(
    h1: CorrelationHistogram, h2: CorrelationHistogram
) -> CorrelationHistogram:
    """Bin-wise sum; shards of the same binning merge associatively."""
    if h1.bin_width_ps != h2.bin_width_ps or not np.array_equal(
        h1.offsets_ps, h2.offsets_ps
    ):
        raise ValueError("histograms must share binning to merge")
    return CorrelationHistogram(h1.bin_width_ps, h1.offsets_ps, h1.counts + h2.counts)


def find_delay(
    h: CorrelationHistogram,
    min_confidence: float = 5.0,
    min_peak_counts: int = 10,
) -> DelayEstimate:
    """Locate the correlation peak and refine it by local centroid.

    Confidence is peak count over mean background (all bins further than
    two bins from the peak).  Ties on the maximum are broken toward the
    smaller |offset|.  ``min_peak_counts`` guards the nearly-empty case:
    a histogram of scattered single counts has a tiny background mean, so
    the ratio alone cannot reject it.
    """
    if len(h.counts) == 0:
        raise ValueError("empty histogram")
    peak_val = h.counts.max()
    candidates = np.flatnonzero(h.counts == peak_val)
    # prefer small |offset|, then the smaller offset
    order = np.lexsort((h.offsets_ps[candidates], np.abs(h.offsets_ps[candidates])))
    peak = candidates[order[0]]

    lo, hi = max(0, peak - 2), min(len(h.counts), peak + 3)
    background = np.concatenate([h.counts[:lo], h.counts[hi:]])
    bg_mean = background.mean() if len(background) else 0.0
    confidence = math.inf if bg_mean == 0 else float(peak_val) / bg_mean
    if peak_val < min_peak_counts or confidence < min_confidence:
        raise DelayNotFound(
            f"no significant correlation peak (peak {peak_val}, confidence "
            f"{confidence:.2f}, need >= {min_peak_counts} counts at "
            f"confidence >= {min_confidence})"
        )
    window_counts = h.counts[lo:hi].astype(float)
    window_offsets = h.offsets_ps[lo:hi].astype(float)
    offset = float((window_counts * window_offsets).sum() / window_counts.sum())
    return DelayEstimate(offset_ps=offset, confidence=confidence)


def _window_labels(t: np.ndarray, windows) -> np.ndarray:
    """Label index per tag from a (start, end, label) schedule; -1 outside."""
    starts = np.array([w[0] for w in windows], dtype=np.int64)
    ends = np.array([w[1] for w in windows], dtype=np.int64)
    idx = np.searchsorted(starts, t, side="right") - 1
    labels = np.full(len(t), -1, dtype=np.int64)
    valid = idx >= 0
    inside = np.zeros(len(t), dtype=bool)
    inside[valid] = t[valid] < ends[idx[valid]]
    labels[inside] = idx[inside]
    return labels


def count_coincidences(
    a: TagStream,
    b: TagStream,
    delay_ps: float,
    window_ps: int,
    windows,
) -> CoincidenceTally:
    """Greedy nearest-neighbour coincidence tally, sifted by basis.

    ``windows`` is a schedule of (start_ps, end_ps, basis_label) entries
    with labels "HV" or "DA"; both users are assumed to follow the same
    schedule.  A pair counts when |t_b - t_a - delay| <= window/2, every
    tag is used at most once, and pairs whose two tags fall in
    differently labelled windows are dropped (basis sifting).
    """
    window_ps = max(int(window_ps), 1)
    if len(a) == 0 or len(b) == 0:
        return CoincidenceTally()
    ta = a.t_ps
    tb = b.t_ps.astype(np.int64) - int(round(delay_ps))
    half = window_ps / 2.0

    # candidate partner for each a-tag: nearest b-tag (left or right)
    pos = np.searchsorted(tb, ta)
    left = np.clip(pos - 1, 0, len(tb) - 1)
    right = np.clip(pos, 0, len(tb) - 1)
    d_left = np.abs(tb[left] - ta)
    d_right = np.abs(tb[right] - ta)
    take_right = d_right < d_left
    cand = np.where(take_right, right, left)
    dist = np.where(take_right, d_right, d_left)
    ok = dist <= half
    ai = np.flatnonzero(ok)
    bi = cand[ok]
    order = np.argsort(dist[ok], kind="stable")
    ai, bi = ai[order], bi[order]

    used_a = np.zeros(len(ta), dtype=bool)
    used_b = np.zeros(len(tb), dtype=bool)
    pairs_a, pairs_b = [], []
    for i, j in zip(ai, bi):
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        pairs_a.append(i)
        pairs_b.append(j)
    if not pairs_a:
        return CoincidenceTally()
    pairs_a = np.array(pairs_a)
    pairs_b = np.array(pairs_b)

    lab_a = _window_labels(a.t_ps[pairs_a], windows)
    lab_b = _window_labels(b.t_ps[pairs_b], windows)
    sifted = (lab_a >= 0) & (lab_a == lab_b)
    pairs_a, pairs_b, lab = pairs_a[sifted], pairs_b[sifted], lab_a[sifted]

    names = [w[2] for w in windows]
    same = a.detector_ids[pairs_a] == b.detector_ids[pairs_b]
    tally = CoincidenceTally()
    for w_idx, is_same in zip(lab, same):
        if names[w_idx] == "HV":
            if is_same:
                tally.n_same_hv += 1
            else:
                tally.n_diff_hv += 1
        else:
            if is_same:
                tally.n_same_da += 1
            else:
                tally.n_diff_da += 1
    return tally


def expected_qber(u_a: np.ndarray, u_b: np.ndarray, rho: np.ndarray) -> float:
    """Noise-free error rate of a pair link with the given arm unitaries,
    averaged over the two measurement bases."""
    from .polmath import BASES, apply_local, outcome_probs

    rho_eff = apply_local(u_a, u_b, rho)
    q = 0.0
    for label in ("HV", "DA"):
        p = outcome_probs(rho_eff, BASES[label], BASES[label])
        q += 0.5 * (p[1] + p[2])
    return float(q)


def qber(t: CoincidenceTally) -> Estimate:
    """Cross-port fraction over both bases with binomial standard error."""
    n = t.total
    if n == 0:
        raise ValueError("cannot estimate an error rate from zero coincidences")
    q = (t.n_diff_hv + t.n_diff_da) / n
    return Estimate(q, math.sqrt(q * (1.0 - q) / n))


def visibility(n_max: float, n_min: float) -> Estimate:
    """(n_max - n_min)/(n_max + n_min) with propagated Poisson error."""
    s = n_max + n_min
    if s <= 0:
        raise ValueError("visibility needs at least one count")
    v = (n_max - n_min) / s
    stderr = 2.0 * math.sqrt(max(n_max * n_min, 0.0) / s**3)
    return Estimate(v, stderr)


def qber_contribution(v: float) -> float:
    """Error-rate share of an imperfectly aligned channel: (1 - v)/2."""
    if not 0.0 <= v <= 1.0:
        raise ValueError("visibility must be in [0, 1]")
    return (1.0 - v) / 2.0


def fidelity_from_qber(q: float) -> float:
    """Entanglement fidelity in the reporting convention F = 1 - 2 QBER."""
    if not 0.0 <= q <= 0.5:
        raise ValueError("q must be in [0, 0.5]")
    return 1.0 - 2.0 * q


def estimated_fidelity(
    pol_contribution: float, baseline_other: float = NON_POLARIZATION_QBER
) -> float:
    """Fidelity estimate from an alignment contribution on top of the
    non-polarization error budget."""
    if not 0.0 <= pol_contribution <= 0.5 or not 0.0 <= baseline_other <= 0.5:
        raise ValueError("error-rate fractions must be in [0, 0.5]")
    return fidelity_from_qber(baseline_other + pol_contribution)


def key_rate_positive(q: float) -> bool:
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must be a fraction")
    return q < QBER_SECURITY_THRESHOLD


def histogram_to_csv(h: CorrelationHistogram, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["offset_ps", "count"])
        for off, c in zip(h.offsets_ps, h.counts):
            writer.writerow([int(off), int(c)])


def histogram_to_dict(h: CorrelationHistogram) -> dict:
    return {
        "schema_version": 1,
        "bin_width_ps": int(h.bin_width_ps),
        "offsets_ps": [int(x) for x in h.offsets_ps],
        "counts": [int(x) for x in h.counts],
    }


def tally_to_dict(t: CoincidenceTally) -> dict:
    d = asdict(t)
    d["schema_version"] = 1
    return d


def save_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
