"""Dense reference simulator on ``(truncated Fock) x (2**N)``.

Basis index is ``k * 2**N + mask`` with atom ``n`` on bit ``n - 1``, the same
layout as :meth:`NilpotentPolynomial.to_dense`.

Frame
-----
:func:`propagate` integrates the Schrodinger equation for

    H = w0 a^+ a + sum_n [ w_n/2 sz_n + E(t) C_n(t) sx_n (a^+ + a) ]

exactly as written, counter-rotating terms included.  To lowest order the
result is ``exp(i sum_n w_n T/2) exp(-a^+ O - G)|0>`` with ``O``, ``G`` built
from the closed-form coefficients, which is the analytic state with every
amplitude multiplied by ``(-1)**(k + |mask| / 2)``.  Since ``|mask| = k`` plus
twice the number of pair factors, the map is the local phase
``i**(k + |mask|)``: a photon factor ``i`` per photon and ``i`` per excited
atom.  :func:`to_analytic_frame` applies the inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .coupling import ControlSchedule
from .nilpotent import NilpotentPolynomial, _popcount

UNITARITY_TOL = 1e-9
CUTOFF_POPULATION_TOL = 1e-8
STEP_HALVING_TOL = 1e-9


class CutoffError(RuntimeError):
    """Population in the top retained Fock level exceeds the adequacy bound."""


class UnitarityError(RuntimeError):
    """A propagator failed the unitarity check."""


class ImpossibleOutcomeError(ValueError):
    """Projection onto an outcome with vanishing probability."""


@dataclass(frozen=True)
class DenseState:
    amplitudes: np.ndarray
    fock_cutoff: int
    num_atoms: int

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if a.size != self.fock_cutoff << self.num_atoms:
            raise ValueError("amplitude vector does not match fock_cutoff * 2**num_atoms")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def vacuum(cls, num_atoms: int, fock_cutoff: int) -> "DenseState":
        a = np.zeros(fock_cutoff << num_atoms, complex)
        a[0] = 1.0
        return cls(a, fock_cutoff, num_atoms)

    @classmethod
    def from_polynomial(cls, poly: NilpotentPolynomial, fock_cutoff: int, normalize: bool = True) -> "DenseState":
        if poly.photon_degree >= fock_cutoff:
            raise CutoffError(f"polynomial needs {poly.photon_degree + 1} Fock levels, cutoff is {fock_cutoff}")
        a = poly.to_dense(fock_cutoff).reshape(-1)
        if normalize:
            a = a / np.linalg.norm(a)
        return cls(a, fock_cutoff, poly.num_atoms)

    @property
    def grid(self) -> np.ndarray:
        """Amplitudes reshaped to ``(fock_cutoff, 2**N)``."""
        return self.amplitudes.reshape(self.fock_cutoff, 1 << self.num_atoms)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def photon_distribution(self) -> np.ndarray:
        return np.sum(np.abs(self.grid) ** 2, axis=1)

    def top_population(self) -> float:
        return float(self.photon_distribution()[-1])

    def with_cutoff(self, fock_cutoff: int) -> "DenseState":
        g = self.grid
        out = np.zeros((fock_cutoff, g.shape[1]), complex)
        keep = min(fock_cutoff, self.fock_cutoff)
        out[:keep] = g[:keep]
        return DenseState(out.reshape(-1), fock_cutoff, self.num_atoms)


@dataclass(frozen=True)
class PropagationSettings:
    """``method='expm'`` exponentiates each constant segment exactly;
    ``'rk4'`` steps with ``time_step`` and checks against a halved step."""

    fock_cutoff: int
    method: str = "expm"
    time_step: float = 1e-3
    interaction_picture: bool = False
    check_step_halving: bool = True

    def __post_init__(self):
        if self.method not in ("expm", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.fock_cutoff < 2:
            raise ValueError("fock_cutoff must be at least 2")
        if not self.time_step > 0:
            raise ValueError("time_step must be positive")


# -- operators -----------------------------------------------------------------------------


def annihilation(L: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, L, dtype=float)), 1)


def _atom_ops(N: int):
    dim = 1 << N
    masks = np.arange(dim)
    sx, sz = [], []
    for n in range(N):
        bit = 1 << n
        x = np.zeros((dim, dim))
        x[masks ^ bit, masks] = 1.0
        sx.append(x)
        sz.append(np.where(masks & bit, 1.0, -1.0))
    return sx, sz


def free_hamiltonian(N: int, L: int, omega_cavity: float, omega_atoms) -> np.ndarray:
    """Diagonal of ``w0 a^+ a + sum w_n sz_n / 2``."""
    _, sz = _atom_ops(N)
    atoms = sum((w / 2) * z for w, z in zip(omega_atoms, sz)) if N else np.zeros(1)
    k = np.arange(L, dtype=float)
    return (omega_cavity * k[:, None] + np.asarray(atoms)[None, :]).reshape(-1)


def hamiltonian(s: ControlSchedule, segment: int, fock_cutoff: int) -> np.ndarray:
    """Dense Hamiltonian during ``segment``."""
    N, L = s.num_atoms, fock_cutoff
    a = annihilation(L)
    xa = a + a.T
    sx, _ = _atom_ops(N)
    amps = s.amplitudes()[segment]
    atoms = sum(amp * x for amp, x in zip(amps, sx)) if N else np.zeros((1, 1))
    H = np.kron(xa, atoms).astype(complex)
    H[np.diag_indices_from(H)] += free_hamiltonian(N, L, s.omega_cavity, s.omega_atoms)
    return H


def _check_unitary(U: np.ndarray, what: str):
    err = np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0])))
    if err > UNITARITY_TOL:
        raise UnitarityError(f"{what}: ||U^+U - 1|| = {err:.3g}")


def _rk4(H: np.ndarray, psi: np.ndarray, duration: float, dt: float) -> np.ndarray:
    steps = max(1, int(np.ceil(duration / dt - 1e-12)))
    h = duration / steps
    A = -1j * H
    for _ in range(steps):
        k1 = A @ psi
        k2 = A @ (psi + 0.5 * h * k1)
        k3 = A @ (psi + 0.5 * h * k2)
        k4 = A @ (psi + h * k3)
        psi = psi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi


def _run(s: ControlSchedule, settings: PropagationSettings, dt: float) -> np.ndarray:
    L = settings.fock_cutoff
    psi = DenseState.vacuum(s.num_atoms, L).amplitudes.copy()
    for j, seg in enumerate(s.segments):
        H = hamiltonian(s, j, L)
        if settings.method == "expm":
            U = expm(-1j * H * seg.duration)
            _check_unitary(U, f"segment {j}")
            psi = U @ psi
        else:
            psi = _rk4(H, psi, seg.duration, dt)
    return psi


def propagate(s: ControlSchedule, settings: PropagationSettings) -> DenseState:
    """Evolve the joint vacuum through the schedule.

    Raises :class:`CutoffError` when the top Fock level holds more than
    ``1e-8`` of the population and :class:`UnitarityError` when the final
    norm drifts by more than ``1e-9``.
    """
    N = s.num_atoms
    if settings.fock_cutoff < N + 4:
        raise CutoffError(f"fock_cutoff {settings.fock_cutoff} below N + 4 = {N + 4}")
    psi = _run(s, settings, settings.time_step)
    if settings.method == "rk4" and settings.check_step_halving:
        fine = _run(s, settings, settings.time_step / 2)
        change = 1 - abs(np.vdot(fine, psi)) ** 2 / (np.vdot(psi, psi).real * np.vdot(fine, fine).real)
        if change > STEP_HALVING_TOL:
            raise UnitarityError(f"step halving changes fidelity by {change:.3g}; reduce time_step")
        psi = fine
    if abs(np.linalg.norm(psi) - 1) > UNITARITY_TOL:
        raise UnitarityError(f"norm drifted to {np.linalg.norm(psi):.12f}")
    if settings.interaction_picture:
        psi = np.exp(1j * free_hamiltonian(N, settings.fock_cutoff, s.omega_cavity, s.omega_atoms) * s.total_time) * psi
    out = DenseState(psi, settings.fock_cutoff, N)
    if out.top_population() > CUTOFF_POPULATION_TOL:
        raise CutoffError(f"top Fock level population {out.top_population():.3g} exceeds {CUTOFF_POPULATION_TOL}")
    return out


def frame_phases(num_atoms: int, fock_cutoff: int) -> np.ndarray:
    """``i**(k + |mask|)`` on the ``(L, 2**N)`` grid."""
    k = np.arange(fock_cutoff)[:, None]
    pc = _popcount(np.arange(1 << num_atoms))[None, :]
    return (1j) ** ((k + pc) % 4)


def to_analytic_frame(d: DenseState, schedule: ControlSchedule | None = None) -> DenseState:
    """Undo the local phases relating the propagated state to ``exp(a^+ O + G)|0>``.

    With ``schedule`` given the vacuum phase ``exp(i sum w_n T / 2)`` is removed too.
    """
    g = d.grid * np.conj(frame_phases(d.num_atoms, d.fock_cutoff))
    if schedule is not None:
        g = g * np.exp(-0.5j * sum(schedule.omega_atoms) * schedule.total_time)
    return DenseState(g.reshape(-1), d.fock_cutoff, d.num_atoms)


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """``|<a|b>|^2 / (<a|a><b|b>)``."""
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    return float(abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real))


# -- field operators -----------------------------------------------------------------------


@dataclass(frozen=True)
class Displace:
    lam: complex

    def generator(self, L: int) -> np.ndarray:
        a = annihilation(L)
        return self.lam * a.T - np.conj(self.lam) * a


@dataclass(frozen=True)
class Squeeze:
    """``exp[(g a^2 - g* a^+^2) t]``."""

    g: complex
    t: float

    def generator(self, L: int) -> np.ndarray:
        a = annihilation(L)
        return (self.g * a @ a - np.conj(self.g) * a.T @ a.T) * self.t


@dataclass(frozen=True)
class Kerr:
    """Evolution for time ``t`` under ``(wc - wL) n + kappa (n^2 + E^3 (a + a^+))``."""

    kappa: float
    laser_amplitude: float
    detuning: float
    t: float

    def hamiltonian(self, L: int) -> np.ndarray:
        a = annihilation(L)
        n = np.diag(np.arange(L, dtype=float))
        return self.detuning * n + self.kappa * (n @ n + self.laser_amplitude**3 * (a + a.T))

    def generator(self, L: int) -> np.ndarray:
        return -1j * self.t * self.hamiltonian(L)


def field_unitary(op, L: int) -> np.ndarray:
    if hasattr(op, "hamiltonian"):
        # long Kerr times: diagonalise instead of scaling-and-squaring
        w, v = np.linalg.eigh(op.hamiltonian(L))
        return (v * np.exp(-1j * w * op.t)) @ v.conj().T
    return expm(op.generator(L))


def exact_field_op(op, d: DenseState, check_cutoff: bool = True) -> DenseState:
    """Apply a field operator (identity on atoms) on the truncated Fock factor."""
    U = field_unitary(op, d.fock_cutoff)
    out = DenseState((U @ d.grid).reshape(-1), d.fock_cutoff, d.num_atoms)
    if check_cutoff:
        top = out.top_population() / max(out.norm**2, 1e-300)
        if top > CUTOFF_POPULATION_TOL:
            raise CutoffError(f"top Fock level population {top:.3g} after {type(op).__name__}")
    return out


def converged_field_op(op, d: DenseState, tol: float = 1e-12, max_cutoff: int = 400) -> DenseState:
    """Apply ``op`` at growing cutoffs until the vacuum row stops changing.

    The input is padded with empty Fock levels; the returned state keeps the
    largest cutoff used.
    """
    L = max(d.fock_cutoff + 8, 2 * d.fock_cutoff)
    prev = None
    while L <= max_cutoff:
        out = exact_field_op(op, d.with_cutoff(L), check_cutoff=False)
        row = out.grid[0]
        if prev is not None and np.max(np.abs(row - prev)) <= tol and out.top_population() <= CUTOFF_POPULATION_TOL:
            return out
        prev = row
        L = int(L * 1.5) + 4
    raise CutoffError(f"field operator {op} did not converge below cutoff {max_cutoff}")


# -- comparison ----------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    fidelity: float
    probability_oracle: float
    probability_analytic: float | None
    details: dict = field(default_factory=dict)

    @property
    def probability_delta(self) -> float | None:
        if self.probability_analytic is None:
            return None
        return self.probability_oracle - self.probability_analytic


def project(d: DenseState, photons: int) -> tuple[np.ndarray, float]:
    """Normalised atomic vector for Fock level ``photons`` and its probability."""
    if not 0 <= photons < d.fock_cutoff:
        raise ValueError(f"photon count {photons} outside 0..{d.fock_cutoff - 1}")
    row = d.grid[photons]
    p = float(np.vdot(row, row).real / d.norm**2)
    if p < 1e-300:
        raise ImpossibleOutcomeError(f"outcome {photons} photons has zero probability")
    return row / np.linalg.norm(row), p


def project_and_compare(d: DenseState, photons: int, analytic) -> ComparisonReport:
    """Fidelity of the projected dense state against an analytic atomic state.

    ``analytic`` is a :class:`~nilcavity.control.PostSelectedState`, a
    photon-free polynomial, or a plain atomic vector.
    """
    vec, p = project(d, photons)
    prob = getattr(analytic, "success_probability", None)
    poly = getattr(analytic, "polynomial", analytic)
    target = poly.atomic_vector() if isinstance(poly, NilpotentPolynomial) else np.asarray(poly)
    if target.size != vec.size:
        raise ValueError("atom number mismatch")
    return ComparisonReport(fidelity(vec, target), p, prob)
