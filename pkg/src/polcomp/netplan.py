"""Full-mesh topology, ITU channel pairing and controller-count accounting.

Signal and idler photons of one pair sit on ITU grid slots symmetric
about the source's center channel, so the k-th link of the mesh is
served by the channel pair (center-k, center+k).  Which concrete k goes
to which link is free as long as the pairing stays symmetric; links are
numbered here in lexicographic order.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

CENTER_CHANNEL = 34
BAND_CHANNELS = 30

COMPENSATION_METHODS = ("canonical", "qber_min")


@dataclass
class NetworkTopology:
    users: list[str]
    links: list[tuple[str, str]]


@dataclass
class ChannelPlan:
    center: int
    # link -> (low channel, high channel); the lower-id user of the pair
    # receives the high channel.
    assignment: dict[tuple[str, str], tuple[int, int]]
    received: dict[str, list[int]]


def default_user_names(n: int) -> list[str]:
    if n <= 26:
        return list(string.ascii_uppercase[:n])
    return [f"U{i:03d}" for i in range(n)]


def full_mesh(n: int, names: list[str] | None = None) -> NetworkTopology:
    """All n(n-1)/2 unordered user pairs, links in lexicographic order."""
    if n < 2:
        raise ValueError(f"a mesh needs at least 2 users, got {n}")
    users = names if names is not None else default_user_names(n)
    if len(users) != n or len(set(users)) != n:
        raise ValueError("user names must be unique and match the count")
    ordered = sorted(users)
    links = [
        (ordered[i], ordered[j])
        for i in range(n)
        for j in range(i + 1, n)
    ]
    return NetworkTopology(users=list(users), links=links)


def pair_channel(ch: int, center: int = CENTER_CHANNEL) -> int:
    """Partner channel on the symmetric grid: ch + partner = 2*center."""
    if ch == center:
        raise ValueError(
            f"channel {ch} is the degenerate center; signal and idler coincide"
        )
    return 2 * center - ch


def assign_channels(
    topo: NetworkTopology,
    center: int = CENTER_CHANNEL,
    band: int = BAND_CHANNELS,
) -> ChannelPlan:
    """Give the k-th link (1-based, lexicographic) the pair (center-k, center+k)."""
    needed = 2 * len(topo.links)
    if needed > band:
        raise ValueError(
            f"channel band exhausted: {needed} channels needed for "
            f"{len(topo.links)} links but only {band} available"
        )
    assignment = {}
    received: dict[str, list[int]] = {u: [] for u in topo.users}
    for k, (ua, ub) in enumerate(topo.links, start=1):
        low, high = center - k, center + k
        assignment[(ua, ub)] = (low, high)
        # links are stored as sorted pairs, so ua is the lower id
        received[ua].append(high)
        received[ub].append(low)
    return ChannelPlan(center=center, assignment=assignment, received=received)


def controllers_needed(k: int, method: str) -> int:
    """Controller count for k links: 2k for laser-reference schemes, k for
    compensation on the source fibres only."""
    if k < 0:
        raise ValueError("link count must be non-negative")
    if method == "canonical":
        return 2 * k
    if method == "qber_min":
        return k
    raise ValueError(f"unknown method {method!r}")


def growth_cost(n: int, method: str) -> int:
    """Compensation tasks created by adding the n-th user to the mesh.

    Laser-reference schemes must align both fibre paths of each of the
    n-1 new links; error-rate minimization only touches the one fibre
    connecting the new user to the source.
    """
    if n < 2:
        raise ValueError("the first joining user is n=2")
    if method == "canonical":
        return 2 * (n - 1)
    if method == "qber_min":
        return 1
    raise ValueError(f"unknown method {method!r}")


def plan_to_dict(topo: NetworkTopology, plan: ChannelPlan) -> dict:
    """JSON-friendly view of a topology and its channel plan."""
    k = len(topo.links)
    return {
        "schema_version": 1,
        "users": list(topo.users),
        "center_channel": plan.center,
        "links": [
            {
                "users": list(link),
                "channels": {
                    "low": plan.assignment[link][0],
                    "high": plan.assignment[link][1],
                    "receiver_of_high": link[0],
                    "receiver_of_low": link[1],
                },
            }
            for link in topo.links
        ],
        "received_channels": {u: sorted(plan.received[u]) for u in sorted(topo.users)},
        "controllers_needed": {m: controllers_needed(k, m) for m in COMPENSATION_METHODS},
    }
