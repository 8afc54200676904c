"""Scenario files and deterministic network construction.

A scenario is a flat, commented ``key = value`` text file; every run is a
pure function of it (plus explicit flag overrides), so reruns are
byte-identical.  The seed is mandatory: nothing in the package ever
falls back to wall-clock entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .channel import DRIFT_SIGMA_PER_HOUR, CompensatedPath, FibreLink
from .compensate import METHODS, CostModel
from .netplan import ChannelPlan, NetworkTopology, assign_channels, full_mesh
from .photostream import DetectorModel, SourceModel
from .polmath import PaddleController, haar_unitary

# Light travels ~4.9 us per km of fibre.
FIBRE_DELAY_PS_PER_KM = 4.9e6


class ScenarioError(Exception):
    """Configuration problem, with file/line diagnostics where known."""


@dataclass
class Scenario:
    seed: int = None
    users: int = 4
    pair_rate_hz: float = 1e5
    werner_p: float = 0.933
    werner_jitter_pp: float = 0.0
    efficiency_min: float = 0.7
    efficiency_max: float = 0.9
    jitter_ps_min: float = 60.0
    jitter_ps_max: float = 80.0
    dark_rate_hz: float = 100.0
    loss_db_min: float = 8.1
    loss_db_max: float = 13.0
    length_km: float = 1.6
    center_channel: int = 34
    band_channels: int = 30
    drift_sigma: float = DRIFT_SIGMA_PER_HOUR
    drift_step_s: float = 3600.0
    horizon_days: float = 10.8
    methods: tuple = METHODS
    target_visibility: float = 0.98
    mean_photons: float = 2e4
    manual_mean_photons: float = 5e4
    blinking_integration_s: float = 0.3
    blinking_target: float = 0.976
    blinking_rate_hz: float = 4e5
    qber_target: float | None = None
    acquisition_window_s: float = 0.5
    simulate_duration_s: float = 0.2
    readout_s: float = 0.25
    move_s_per_deg: float = 0.01
    human_overhead_s: float = 2.0

    def cost_model(self) -> CostModel:
        return CostModel(self.readout_s, self.move_s_per_deg, self.human_overhead_s)

    def validate(self) -> None:
        if self.seed is None:
            raise ScenarioError("scenario must set an explicit seed")
        if self.users < 2:
            raise ScenarioError(f"users must be at least 2, got {self.users}")
        for name in ("efficiency", "jitter_ps", "loss_db"):
            lo = getattr(self, f"{name}_min")
            hi = getattr(self, f"{name}_max")
            if lo > hi:
                raise ScenarioError(f"{name}_min must not exceed {name}_max")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ScenarioError(f"unknown methods: {sorted(unknown)}")
        if not self.methods:
            raise ScenarioError("at least one method must be enabled")


_FIELD_TYPES = {f.name: f.type for f in fields(Scenario)}


def _coerce(key: str, raw: str):
    if key == "methods":
        return tuple(m.strip() for m in raw.split(",") if m.strip())
    if key == "qber_target":
        return None if raw.lower() in ("auto", "none") else float(raw)
    ftype = _FIELD_TYPES[key]
    if ftype in ("int", int):
        return int(raw)
    return float(raw)


def parse_scenario(path) -> Scenario:
    """Parse a flat key=value file; '#' starts a comment anywhere."""
    sc = Scenario()
    seen = set()
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ScenarioError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ScenarioError(f"{path}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ScenarioError(f"{path}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            setattr(sc, key, _coerce(key, raw))
        except ValueError as exc:
            raise ScenarioError(
                f"{path}:{lineno}: bad value for {key!r}: {exc}"
            ) from exc
    try:
        sc.validate()
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return sc


def scenario_text(sc: Scenario) -> str:
    """Render a scenario back to its file format (used for templating)."""
    out = []
    for f in fields(Scenario):
        value = getattr(sc, f.name)
        if f.name == "methods":
            value = ",".join(value)
        elif value is None:
            value = "auto"
        out.append(f"{f.name} = {value}")
    return "\n".join(out) + "\n"


@dataclass
class BuiltNetwork:
    """Deterministic materialization of a scenario."""

    scenario: Scenario
    topo: NetworkTopology
    plan: ChannelPlan
    user_fibres: dict[str, FibreLink]
    detectors: dict[str, DetectorModel]
    link_loss_db: dict[tuple, float]
    link_werner_p: dict[tuple, float]

    def source_for_link(self, link) -> SourceModel:
        return SourceModel(self.scenario.pair_rate_hz, self.link_werner_p[link])

    def arm_losses(self, link) -> tuple[float, float]:
        """Split a link's loss budget evenly over its two fibre paths."""
        t = 10.0 ** (-self.link_loss_db[link] / 10.0)
        arm = float(np.sqrt(t))
        return arm, arm


def build_network(sc: Scenario) -> BuiltNetwork:
    """All random draws happen here, in a fixed documented order."""
    sc.validate()
    topo = full_mesh(sc.users)
    plan = assign_channels(topo, sc.center_channel, sc.band_channels)
    rng = np.random.default_rng((sc.seed, 0xB1F))

    user_fibres = {}
    detectors = {}
    for u in topo.users:
        base_delay = int(round(sc.length_km * FIBRE_DELAY_PS_PER_KM))
        offset = int(rng.integers(-500_000, 500_001))
        user_fibres[u] = FibreLink(
            id=f"fibre-{u}",
            length_km=sc.length_km,
            loss_db=0.0,  # losses are accounted per logical link
            birefringence=haar_unitary(rng),
            drift_sigma=sc.drift_sigma,
            delay_ps=base_delay + offset,
        )
        detectors[u] = DetectorModel(
            efficiency=float(rng.uniform(sc.efficiency_min, sc.efficiency_max)),
            jitter_sigma_ps=float(rng.uniform(sc.jitter_ps_min, sc.jitter_ps_max)),
            dark_rate_hz=sc.dark_rate_hz,
        )

    link_loss = {}
    link_p = {}
    for link in topo.links:
        link_loss[link] = float(rng.uniform(sc.loss_db_min, sc.loss_db_max))
        dq = float(rng.uniform(-sc.werner_jitter_pp, sc.werner_jitter_pp)) / 100.0
        link_p[link] = float(np.clip(sc.werner_p - 2.0 * dq, 0.0, 1.0))

    return BuiltNetwork(
        scenario=sc,
        topo=topo,
        plan=plan,
        user_fibres=user_fibres,
        detectors=detectors,
        link_loss_db=link_loss,
        link_werner_p=link_p,
    )


def fresh_arm_path(
    net: BuiltNetwork, user: str, loss_db: float, side: str = "receiver"
) -> CompensatedPath:
    """Independent compensation path over a copy of the user's fibre."""
    fibre = net.user_fibres[user]
    link = FibreLink(
        id=fibre.id,
        length_km=fibre.length_km,
        loss_db=loss_db,
        birefringence=fibre.birefringence.copy(),
        drift_sigma=fibre.drift_sigma,
        delay_ps=fibre.delay_ps,
    )
    return CompensatedPath(link=link, controller=PaddleController(), controller_side=side)


def aligned_path(
    net: BuiltNetwork, user: str, loss_db: float = 0.0, side: str = "source"
) -> CompensatedPath:
    """Path of an already-compensated network member: effective unitary is
    the identity.  Modeled by an identity fibre under the default (net
    identity) controller; under isotropic drift this is statistically the
    same as keeping the Haar fibre with an exactly inverting controller.
    """
    path = fresh_arm_path(net, user, loss_db, side)
    path.link.birefringence = np.eye(2, dtype=complex)
    return path
