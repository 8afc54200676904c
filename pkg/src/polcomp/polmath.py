"""Jones calculus and two-qubit polarization-state algebra.

Conventions used throughout the package:

* kets are length-2 complex vectors in the (H, V) linear basis,
* two-photon density operators are 4x4 arrays with index ordering
  |HH>, |HV>, |VH>, |VV> (first factor is arm A),
* angles are radians internally; degrees appear only at configuration
  boundaries,
* global phase is ignored everywhere, so state equality is always
  expressed through measurement probabilities, never amplitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

H = np.array([1.0, 0.0], dtype=complex)
V = np.array([0.0, 1.0], dtype=complex)
D = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)
A = np.array([1.0, -1.0], dtype=complex) / np.sqrt(2.0)

KETS = {"H": H, "V": V, "D": D, "A": A}

DEFAULT_RETARDANCES = (np.pi / 2, np.pi, np.pi / 2)


def rotation(theta: float) -> np.ndarray:
    """Real rotation of the polarization plane by ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def retarder_unitary(delta: float, theta: float) -> np.ndarray:
    """Jones matrix of a linear retarder.

    ``delta`` is the fixed phase delay between the fast and slow axis,
    ``theta`` the orientation of the fast axis:

        U = R(theta) . diag(1, e^{i delta}) . R(-theta)

    A fibre-loop paddle is such a retarder with fixed delta and a
    rotatable theta.  The matrix is pi-periodic in theta.
    """
    r = rotation(theta)
    return r @ np.diag([1.0, np.exp(1j * delta)]) @ r.conj().T


@dataclass(eq=False)
class MeasBasis:
    """A two-port polarization analyzer: label plus two orthonormal kets."""

    label: str
    states: tuple[np.ndarray, np.ndarray]


HV = MeasBasis("HV", (H, V))
DA = MeasBasis("DA", (D, A))
BASES = {"HV": HV, "DA": DA}

# Nominal reference state per basis: compensation sends the first port's
# state and minimizes counts on the orthogonal port.
NOMINAL_STATE = {"HV": H, "DA": D}


@dataclass
class PaddleController:
    """Stack of fibre-loop retarders with adjustable orientations.

    Default build is the standard quarter-half-quarter loop controller.
    Angles are stored modulo pi since the retarder matrix is pi-periodic
    in orientation.
    """

    retardances: np.ndarray = field(
        default_factory=lambda: np.array(DEFAULT_RETARDANCES)
    )
    angles: np.ndarray = None

    def __post_init__(self):
        self.retardances = np.asarray(self.retardances, dtype=float)
        if self.angles is None:
            self.angles = np.zeros_like(self.retardances)
        self.angles = np.asarray(self.angles, dtype=float) % np.pi
        if self.retardances.shape != self.angles.shape:
            raise ValueError(
                "retardances and angles must have the same length, got "
                f"{self.retardances.shape} vs {self.angles.shape}"
            )

    def __len__(self) -> int:
        return len(self.retardances)

    def set_angle(self, i: int, theta: float) -> None:
        self.angles[i] = theta % np.pi

    def copy(self) -> "PaddleController":
        return PaddleController(self.retardances.copy(), self.angles.copy())

    @property
    def angles_deg(self) -> np.ndarray:
        return np.degrees(self.angles)


def paddle_unitary(controller: PaddleController) -> np.ndarray:
    """Ordered product of the controller's retarders.

    The first paddle acts first on the incoming state, so it sits
    rightmost in the matrix product.
    """
    u = np.eye(2, dtype=complex)
    for delta, theta in zip(controller.retardances, controller.angles):
        u = retarder_unitary(delta, theta) @ u
    return u


def phi_plus() -> np.ndarray:
    """Density operator of the maximally correlated pair (|HH>+|VV>)/sqrt(2)."""
    psi = (np.kron(H, H) + np.kron(V, V)) / np.sqrt(2.0)
    return np.outer(psi, psi.conj())


def werner_state(p: float) -> np.ndarray:
    """Isotropic-noise pair state  p |phi+><phi+| + (1-p) I/4.

    The weight p models the source imperfection budget; p=1 is the ideal
    pair, p=0 the maximally mixed state.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"werner weight must be in [0, 1], got {p}")
    return p * phi_plus() + (1.0 - p) * np.eye(4) / 4.0


def apply_local(u_a: np.ndarray, u_b: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Propagate each photon through its own channel: (uA x uB) rho (uA x uB)+."""
    u = np.kron(u_a, u_b)
    return u @ rho @ u.conj().T


def outcome_probs(rho: np.ndarray, basis_a: MeasBasis, basis_b: MeasBasis) -> np.ndarray:
    """Joint port probabilities (p00, p01, p10, p11) for a two-arm measurement."""
    probs = np.empty(4)
    for i, ka in enumerate(basis_a.states):
        for j, kb in enumerate(basis_b.states):
            proj = np.kron(ka, kb)
            probs[2 * i + j] = np.real(proj.conj() @ rho @ proj)
    return probs


def single_arm_probs(state: np.ndarray, u: np.ndarray, basis: MeasBasis) -> np.ndarray:
    """Port probabilities for one photon sent through ``u`` into an analyzer."""
    out = u @ state
    return np.array([abs(np.vdot(k, out)) ** 2 for k in basis.states])


def haar_unitary(rng) -> np.ndarray:
    """Haar-distributed 2x2 unitary (QR of a complex Gaussian, phase-fixed)."""
    rng = np.random.default_rng(rng)
    z = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def is_unitary(u: np.ndarray, tol: float = 1e-10) -> bool:
    return np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=tol)


def is_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> bool:
    if not np.allclose(rho, rho.conj().T, atol=tol):
        return False
    if abs(np.trace(rho).real - 1.0) > tol:
        return False
    return bool(np.linalg.eigvalsh(rho).min() >= -tol)
