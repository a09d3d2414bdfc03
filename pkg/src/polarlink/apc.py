"""Automated polarization compensation: reference states, cost, feedback loop.

An injector cycles through six reference SOPs; the compensator measures their
fidelities after the fiber, derives a scalar cost, and runs finite-difference
gradient descent on a four-retarder polarization controller until the minimum
fidelity clears the target threshold or the session times out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .channel import FiberChannel
from .polmath import CARDINAL_STATES, PolTransform

OUTCOME_SKIPPED = "skipped"
OUTCOME_CONVERGED = "converged"
OUTCOME_TIMEOUT = "timeout"

REFERENCE_POWER_MW = 0.5  # injected reference laser power; no simulated effect

_GRADIENT_TOL = 1e-9
_MAX_HALVINGS = 5


class ApcError(ValueError):
    """Invalid compensation configuration."""


@dataclass(frozen=True)
class ReferenceSequence:
    """Ordered reference SOPs injected during a compensation cycle."""

    states: tuple = CARDINAL_STATES
    dwell_s: float = 0.02

    def __post_init__(self):
        if len(self.states) != 6:
            raise ApcError(f"expected 6 reference states, got {len(self.states)}")
        matrix = np.array([s.as_array() for s in self.states])
        if np.linalg.matrix_rank(matrix, tol=1e-9) != 3:
            raise ApcError("reference states must span Stokes space (rank 3)")
        object.__setattr__(self, "_matrix", matrix)

    def as_matrix(self) -> np.ndarray:
        """The 6x3 stack of reference Stokes vectors."""
        return self._matrix


@dataclass
class Controller:
    """Four-retarder in-line controller: rotations about alternating s1/s3 axes.

    The x-z-x-z angle parameterization is surjective onto SO(3) with one
    redundant degree of freedom, which avoids gimbal lock during descent.
    """

    params: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        p = np.asarray(self.params, dtype=float)
        if p.shape != (4,):
            raise ApcError("controller needs exactly 4 retarder angles")
        self.params = p

    def to_transform(self) -> PolTransform:
        p = self.params
        m = (
            _ScipyRotation.from_euler("xzx", p[:3]).as_matrix()
            @ _ScipyRotation.from_euler("z", p[3]).as_matrix()
        )
        return PolTransform(m)

    @classmethod
    def fitting(cls, target: PolTransform) -> "Controller":
        """Controller whose transform equals ``target`` (last retarder at 0)."""
        angles = _ScipyRotation.from_matrix(target.rotation).as_euler("xzx")
        return cls(np.array([*angles, 0.0]))


@dataclass(frozen=True)
class ApcConfig:
    check_threshold: float = 0.98
    target_threshold: float = 0.99
    timeout_s: float = 55.0
    step_size: float = 4.0
    fd_delta: float = 0.02
    cycle_time_s: float = 0.12

    def __post_init__(self):
        if not 0.0 < self.check_threshold <= self.target_threshold < 1.0:
            raise ApcError("need 0 < check_threshold <= target_threshold < 1")
        if self.timeout_s <= 0 or self.cycle_time_s <= 0:
            raise ApcError("timeout_s and cycle_time_s must be > 0")


@dataclass(frozen=True)
class SessionRecord:
    outcome: str
    duration_s: float
    min_fidelity_before: float
    min_fidelity_after: float
    iterations: int
    start_time_s: float = 0.0


def measure_fidelities(
    channel_transform: PolTransform, ctrl: Controller, refs: ReferenceSequence
) -> np.ndarray:
    """Fidelity of each reference state through channel then controller."""
    composite = ctrl.to_transform().rotation @ channel_transform.rotation
    m = refs.as_matrix()
    return 0.5 * (1.0 + np.einsum("ij,ij->i", m, m @ composite.T))


def cost(fidelities) -> float:
    """Feedback error signal: 1 - mean fidelity.

    The mean gives a smooth gradient; convergence is gated separately on the
    minimum fidelity against the target threshold.
    """
    f = np.asarray(fidelities, dtype=float)
    return float(1.0 - f.mean())


def _cost_at(params: np.ndarray, channel_transform: PolTransform, refs: ReferenceSequence) -> float:
    return cost(measure_fidelities(channel_transform, Controller(params.copy()), refs))


def compensation_step(
    channel_transform: PolTransform,
    ctrl: Controller,
    refs: ReferenceSequence,
    cfg: ApcConfig,
    rng: np.random.Generator,
) -> Controller:
    """One gradient-descent iteration with backtracking line search.

    The gradient is estimated by central finite differences (two measurement
    cycles per parameter).  The step length starts at step_size and is halved
    up to five times until the cost does not increase; if no descent direction
    is found the parameters get a small random kick to escape a saddle.
    """
    params = ctrl.params
    base = _cost_at(params, channel_transform, refs)
    grad = np.zeros(4)
    for k in range(4):
        delta = np.zeros(4)
        delta[k] = cfg.fd_delta
        grad[k] = (
            _cost_at(params + delta, channel_transform, refs)
            - _cost_at(params - delta, channel_transform, refs)
        ) / (2.0 * cfg.fd_delta)
    grad_norm = float(np.linalg.norm(grad))
    if grad_norm < _GRADIENT_TOL:
        return Controller(params.copy())
    step = cfg.step_size
    for _ in range(1 + _MAX_HALVINGS):
        candidate = params - step * grad
        if _cost_at(candidate, channel_transform, refs) <= base:
            return Controller(candidate)
        step *= 0.5
    return Controller(params + rng.normal(0.0, cfg.fd_delta, size=4))


def run_session(
    ch: FiberChannel,
    ctrl: Controller,
    cfg: ApcConfig,
    rng: np.random.Generator,
    refs: ReferenceSequence | None = None,
    actuate: bool = True,
) -> SessionRecord:
    """Run one compensation session, advancing the channel clock as it goes.

    Session duration is cycle_time * (1 + 9 * iterations): one check cycle
    plus, per iteration, eight finite-difference cycles and one re-measure
    cycle.  With ``actuate`` false the session only performs the check cycle
    (fidelities are still measured, for logging) and never moves the
    controller.
    """
    if refs is None:
        refs = ReferenceSequence()
    start = ch.sim_time
    fids = measure_fidelities(ch.transform, ctrl, refs)
    ch.advance(cfg.cycle_time_s)
    min_before = float(fids.min())
    if not actuate or min_before >= cfg.check_threshold:
        return SessionRecord(
            outcome=OUTCOME_SKIPPED,
            duration_s=ch.sim_time - start,
            min_fidelity_before=min_before,
            min_fidelity_after=min_before,
            iterations=0,
            start_time_s=start,
        )
    iterations = 0
    min_after = min_before
    while True:
        stepped = compensation_step(ch.transform, ctrl, refs, cfg, rng)
        ctrl.params = stepped.params
        ch.advance(8 * cfg.cycle_time_s)
        fids = measure_fidelities(ch.transform, ctrl, refs)
        ch.advance(cfg.cycle_time_s)
        iterations += 1
        min_after = float(fids.min())
        if min_after >= cfg.target_threshold:
            outcome = OUTCOME_CONVERGED
            break
        if ch.sim_time - start >= cfg.timeout_s:
            outcome = OUTCOME_TIMEOUT
            break
    return SessionRecord(
        outcome=outcome,
        duration_s=ch.sim_time - start,
        min_fidelity_before=min_before,
        min_fidelity_after=min_after,
        iterations=iterations,
        start_time_s=start,
    )


def write_sessions_csv(path, records) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["start_time_s", "outcome", "duration_s", "min_f_before", "min_f_after", "iterations"]
        )
        for r in records:
            writer.writerow(
                [
                    f"{r.start_time_s:.6f}",
                    r.outcome,
                    f"{r.duration_s:.6f}",
                    f"{r.min_fidelity_before:.9f}",
                    f"{r.min_fidelity_after:.9f}",
                    r.iterations,
                ]
            )
