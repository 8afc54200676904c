"""Fibre links: static birefringence, slow drift, loss, attached controllers.

A link's polarization action is a single SU(2) unitary; mechanical and
thermal stress make it wander over hours.  The drift model is an
isotropic left-multiplied random walk,

    U_{t+1} = exp(-i eps (n . sigma)) U_t,

with a uniformly random axis n on the sphere and kick size
eps ~ |Normal(0, sigma)| per step.  Stepping is a pure function of
(process seed, link id, step counter), so trajectories are bit-exact
reproducible and different links drift independently.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .polmath import PaddleController, paddle_unitary

# Kick width (radians per hourly step) reproducing a 0.6% QBER standard
# deviation over a 10.8-day hourly-stepped run on the reference network
# (see demos/calibrate_drift.py for the fitting script).
DRIFT_SIGMA_PER_HOUR = 6.8e-3

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


@dataclass
class FibreLink:
    """One fibre path with its loss budget and current polarization action."""

    id: str
    length_km: float = 1.6
    loss_db: float = 0.0
    birefringence: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    drift_sigma: float = 0.0
    delay_ps: int = 0
    drift_step: int = 0

    def __post_init__(self):
        if self.length_km <= 0:
            raise ValueError(f"length_km must be positive, got {self.length_km}")
        if self.loss_db < 0:
            raise ValueError(f"loss_db must be non-negative, got {self.loss_db}")


@dataclass
class DriftProcess:
    step_interval_s: float = 3600.0
    sigma: float = DRIFT_SIGMA_PER_HOUR
    rng_seed: int = 0

    def __post_init__(self):
        if self.step_interval_s <= 0:
            raise ValueError("step_interval_s must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass
class CompensatedPath:
    """A fibre plus the one controller assigned to it.

    ``controller_side`` decides the composition order: a receiver-side
    controller acts after the fibre, a source-side one before it.
    """

    link: FibreLink
    controller: PaddleController = field(default_factory=PaddleController)
    controller_side: str = "receiver"

    def __post_init__(self):
        if self.controller_side not in ("receiver", "source"):
            raise ValueError(f"unknown controller side {self.controller_side!r}")


def _step_rng(link: FibreLink, process: DriftProcess) -> np.random.Generator:
    key = (
        process.rng_seed & 0xFFFFFFFFFFFFFFFF,
        zlib.crc32(link.id.encode()),
        link.drift_step,
    )
    return np.random.default_rng(key)


def step_drift(link: FibreLink, process: DriftProcess) -> FibreLink:
    """Advance the link's birefringence by one drift step.

    Returns a new link with the kicked unitary and an incremented step
    counter; the input link is left untouched.  sigma = 0 keeps the
    unitary bit-identical.
    """
    if process.sigma == 0.0:
        return replace(link, drift_step=link.drift_step + 1)
    rng = _step_rng(link, process)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    eps = abs(rng.normal(0.0, process.sigma))
    n_sigma = np.tensordot(axis, PAULI, axes=1)
    kick = np.cos(eps) * np.eye(2) - 1j * np.sin(eps) * n_sigma
    return replace(
        link,
        birefringence=kick @ link.birefringence,
        drift_step=link.drift_step + 1,
    )


def effective_unitary(path: CompensatedPath) -> np.ndarray:
    """Total polarization action of fibre and controller in traversal order."""
    u_ctrl = paddle_unitary(path.controller)
    if path.controller_side == "receiver":
        return u_ctrl @ path.link.birefringence
    return path.link.birefringence @ u_ctrl


def transmission_probability(link: FibreLink) -> float:
    """Photon survival probability 10^(-loss_dB/10)."""
    return 10.0 ** (-link.loss_db / 10.0)
