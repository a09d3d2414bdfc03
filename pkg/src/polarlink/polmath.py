"""Polarization math on the Poincare sphere.

Pure states of polarization are unit Stokes vectors (s1, s2, s3); lossless
fiber and controller transformations act on them as proper rotations.  The
two-photon state is a visibility-parameterized mixture around |Phi+>, which is
all the link-level observables (fringe visibility, CHSH S) depend on.

Convention: s1 <-> H/V, s2 <-> D/A, s3 <-> R/L.  A linear analyzer at angle
theta (degrees from H) projects onto the Stokes direction
(cos 2theta, sin 2theta, 0).  In the Jones picture this maps (s1, s2, s3) to
the Pauli triple (sigma_z, sigma_x, sigma_y).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

_NORM_TOL = 1e-6
_MATRIX_TOL = 1e-9

# Pauli matrices ordered to match the (s1, s2, s3) Stokes convention.
_PAULI = np.array(
    [
        [[1, 0], [0, -1]],  # sigma_z
        [[0, 1], [1, 0]],  # sigma_x
        [[0, -1j], [1j, 0]],  # sigma_y
    ],
    dtype=complex,
)

# |Phi+> = (|HH> + |VV>)/sqrt(2) in the H/V product basis.
_PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)

# Correlation matrix of |Phi+> for linear analyzers: E(a, b) = n_a . T . n_b.
_PHI_PLUS_T = np.diag([1.0, 1.0, -1.0])


class PolarizationError(ValueError):
    """Invalid polarization-state or transform input."""


@dataclass(frozen=True)
class StokesVector:
    """Pure state of polarization as a unit vector on the Poincare sphere."""

    s1: float
    s2: float
    s3: float

    def __post_init__(self):
        if abs(self.norm() - 1.0) > _NORM_TOL:
            raise PolarizationError(
                f"Stokes vector not normalized: |s| = {self.norm():.8f}"
            )

    def norm(self) -> float:
        return float(np.sqrt(self.s1**2 + self.s2**2 + self.s3**2))

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3])

    @classmethod
    def from_array(cls, v) -> "StokesVector":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(v[1]), float(v[2]))


# The six cardinal states: H, V, D, A, right/left circular.
H = StokesVector(1, 0, 0)
V = StokesVector(-1, 0, 0)
D = StokesVector(0, 1, 0)
A = StokesVector(0, -1, 0)
R_CIRC = StokesVector(0, 0, 1)
L_CIRC = StokesVector(0, 0, -1)

CARDINAL_STATES = (H, V, D, A, R_CIRC, L_CIRC)


@dataclass(frozen=True)
class PolTransform:
    """Lossless polarization transformation: a proper rotation of Stokes space."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise PolarizationError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r @ r.T, np.eye(3), atol=_MATRIX_TOL):
            raise PolarizationError("rotation is not orthogonal")
        if abs(np.linalg.det(r) - 1.0) > _MATRIX_TOL:
            raise PolarizationError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)

    @classmethod
    def identity(cls) -> "PolTransform":
        return cls(np.eye(3))

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float) -> "PolTransform":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return cls(_ScipyRotation.from_rotvec(axis * angle_rad).as_matrix())

    @classmethod
    def random(cls, rng: np.random.Generator) -> "PolTransform":
        """Rotation drawn uniformly (Haar) over SO(3)."""
        return cls(_ScipyRotation.random(random_state=rng).as_matrix())

    def apply(self, s: StokesVector) -> StokesVector:
        return StokesVector.from_array(self.rotation @ s.as_array())

    def compose(self, other: "PolTransform") -> "PolTransform":
        """self after other: (self @ other).apply(s) == self.apply(other.apply(s))."""
        return PolTransform(self.rotation @ other.rotation)

    def inverse(self) -> "PolTransform":
        return PolTransform(self.rotation.T)

    def as_rotvec(self) -> np.ndarray:
        return _ScipyRotation.from_matrix(self.rotation).as_rotvec()


@dataclass(frozen=True)
class TwoQubitPolState:
    """Visibility-parameterized two-photon state: V |Phi+><Phi+| + (1-V) I/4."""

    visibility: float

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise PolarizationError(f"visibility must be in [0, 1], got {self.visibility}")

    def density_matrix(self) -> np.ndarray:
        pure = np.outer(_PHI_PLUS, _PHI_PLUS.conj())
        return self.visibility * pure + (1.0 - self.visibility) * np.eye(4) / 4.0


@dataclass(frozen=True)
class AnalyzerSetting:
    """Linear-polarization analyzer angle in degrees, reduced modulo 180."""

    angle_deg: float

    def __post_init__(self):
        object.__setattr__(self, "angle_deg", float(self.angle_deg) % 180.0)

    def stokes(self) -> np.ndarray:
        two_theta = 2.0 * np.deg2rad(self.angle_deg)
        return np.array([np.cos(two_theta), np.sin(two_theta), 0.0])

    def jones(self) -> np.ndarray:
        theta = np.deg2rad(self.angle_deg)
        return np.array([np.cos(theta), np.sin(theta)], dtype=complex)

    def orthogonal(self) -> "AnalyzerSetting":
        return AnalyzerSetting(self.angle_deg + 90.0)


def sop_fidelity(a: StokesVector, b: StokesVector) -> float:
    """Overlap fidelity of two pure SOPs: F = (1 + a.b)/2."""
    if abs(a.norm() - 1.0) > _NORM_TOL or abs(b.norm() - 1.0) > _NORM_TOL:
        raise PolarizationError("sop_fidelity requires normalized Stokes vectors")
    f = 0.5 * (1.0 + float(a.as_array() @ b.as_array()))
    return min(max(f, 0.0), 1.0)


def su2_from_transform(t: PolTransform) -> np.ndarray:
    """Jones-space unitary whose Pauli conjugation reproduces the Stokes rotation.

    With the (sigma_z, sigma_x, sigma_y) ordering, U (n . sigma) U^dagger
    equals (R n) . sigma for U = exp(-i angle/2 axis . sigma).
    """
    rotvec = t.as_rotvec()
    angle = np.linalg.norm(rotvec)
    if angle < 1e-15:
        return np.eye(2, dtype=complex)
    axis = rotvec / angle
    n_sigma = np.tensordot(axis, _PAULI, axes=1)
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * n_sigma


def coincidence_prob(
    state: TwoQubitPolState,
    a: AnalyzerSetting,
    b: AnalyzerSetting,
    idler_channel: PolTransform | None = None,
) -> float:
    """Probability that both photons pass their linear analyzers.

    Computed in the Jones picture: the idler channel is lifted to an SU(2)
    unitary and the transformed density matrix is projected onto the product
    of the two analyzer states.  With an identity channel this reduces to
    (1 + V cos 2(a - b)) / 4.
    """
    if idler_channel is None:
        idler_channel = PolTransform.identity()
    u = su2_from_transform(idler_channel)
    u_full = np.kron(np.eye(2, dtype=complex), u)
    rho = u_full @ state.density_matrix() @ u_full.conj().T
    ket = np.kron(a.jones(), b.jones())
    p = float(np.real(ket.conj() @ rho @ ket))
    return min(max(p, 0.0), 1.0)


def coincidence_prob_stokes(
    state: TwoQubitPolState,
    a: AnalyzerSetting,
    b: AnalyzerSetting,
    idler_channel: PolTransform | None = None,
) -> float:
    """Fast closed-form coincidence probability via the Stokes-rotation path.

    P = (1 + V * n_a . T . R^T n_b) / 4 where T is the |Phi+> correlation
    matrix for linear analyzers.  Agrees with ``coincidence_prob`` to 1e-9.
    """
    n_b = b.stokes()
    if idler_channel is not None:
        n_b = idler_channel.rotation.T @ n_b
    corr = float(a.stokes() @ _PHI_PLUS_T @ n_b)
    p = 0.25 * (1.0 + state.visibility * corr)
    return min(max(p, 0.0), 1.0)


def correlation(
    state: TwoQubitPolState,
    a: AnalyzerSetting,
    b: AnalyzerSetting,
    idler_channel: PolTransform | None = None,
) -> float:
    """Correlation E(a, b) built from the four projector-pair probabilities."""
    a_perp = a.orthogonal()
    b_perp = b.orthogonal()
    return (
        coincidence_prob_stokes(state, a, b, idler_channel)
        + coincidence_prob_stokes(state, a_perp, b_perp, idler_channel)
        - coincidence_prob_stokes(state, a, b_perp, idler_channel)
        - coincidence_prob_stokes(state, a_perp, b, idler_channel)
    )


CANONICAL_CHSH_ANGLES = (
    AnalyzerSetting(0.0),
    AnalyzerSetting(45.0),
    AnalyzerSetting(22.5),
    AnalyzerSetting(67.5),
)


def chsh_expected(
    state: TwoQubitPolState,
    idler_channel: PolTransform | None,
    a: AnalyzerSetting,
    a_prime: AnalyzerSetting,
    b: AnalyzerSetting,
    b_prime: AnalyzerSetting,
) -> float:
    """CHSH parameter S = E(a,b) - E(a,b') + E(a',b) + E(a',b')."""
    return (
        correlation(state, a, b, idler_channel)
        - correlation(state, a, b_prime, idler_channel)
        + correlation(state, a_prime, b, idler_channel)
        + correlation(state, a_prime, b_prime, idler_channel)
    )
