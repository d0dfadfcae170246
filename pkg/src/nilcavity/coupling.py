"""Coupling coefficients of the weak-excitation joint state from piecewise-constant controls.

For atom ``n`` with Raman coupling ``C_n(t)``, laser amplitude ``E(t)``, cavity
frequency ``w0`` and atomic frequency ``w_n``::

    I_n  = i * int_0^T exp(i (w0 + w_n)(tau - T)) C_n(tau) E(tau) dtau
    I_nm = int_0^T dtau int_0^tau dtheta E(tau) E(theta) C_n(theta) C_m(tau)
           * exp(-i [tau (w0 - w_m) + T (w_n + w_m) - theta (w_n + w0)])

Only ``I_nm + I_mn`` enters the state because the raising variables commute.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import yaml
from scipy.linalg import expm
from scipy.optimize import least_squares

EXCITATION_BOUND = 0.2
RESONANCE_THRESHOLD = 0.1
SCHEDULE_SCHEMA_VERSION = 1


class ScheduleError(ValueError):
    """Invalid control schedule."""


class SingularScheduleError(ValueError):
    """The schedule-to-coefficient map cannot be inverted for this template."""

    def __init__(self, message: str, condition_number: float):
        super().__init__(f"{message} (condition number {condition_number:.3g})")
        self.condition_number = condition_number


@dataclass(frozen=True)
class Segment:
    duration: float
    laser_amplitude: float
    couplings: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "couplings", tuple(float(c) for c in self.couplings))
        if not self.duration > 0:
            raise ScheduleError(f"segment duration must be positive, got {self.duration}")


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant laser amplitude and per-atom couplings.

    ``couplings[n-1] == 0`` means atom ``n`` is outside the cavity during that
    segment.
    """

    segments: tuple[Segment, ...]
    omega_cavity: float
    omega_atoms: tuple[float, ...]

    def __post_init__(self):
        segs = tuple(s if isinstance(s, Segment) else Segment(**s) for s in self.segments)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "omega_atoms", tuple(float(w) for w in self.omega_atoms))
        if not segs:
            raise ScheduleError("schedule needs at least one segment")
        N = len(self.omega_atoms)
        for i, s in enumerate(segs):
            if len(s.couplings) != N:
                raise ScheduleError(f"segment {i}: {len(s.couplings)} couplings for {N} atoms")

    @property
    def num_atoms(self) -> int:
        return len(self.omega_atoms)

    @property
    def total_time(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    def amplitudes(self) -> np.ndarray:
        """``E * C_n`` per segment, shape ``(segments, N)``."""
        return np.array([[s.laser_amplitude * c for c in s.couplings] for s in self.segments])

    @classmethod
    def uniform(cls, num_atoms, amplitude, duration, omega_cavity=0.0, omega_atoms=None, coupling=1.0):
        """Single segment with every atom coupled equally."""
        if omega_atoms is None:
            omega_atoms = [-omega_cavity] * num_atoms
        return cls((Segment(duration, amplitude, [coupling] * num_atoms),), omega_cavity, tuple(omega_atoms))

    def to_dict(self) -> dict:
        return {
            "version": SCHEDULE_SCHEMA_VERSION,
            "omega_cavity": self.omega_cavity,
            "omega_atoms": list(self.omega_atoms),
            "segments": [
                {"duration": s.duration, "laser_amplitude": s.laser_amplitude, "couplings": list(s.couplings)}
                for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ControlSchedule":
        allowed = {"version", "omega_cavity", "omega_atoms", "segments"}
        unknown = set(data) - allowed
        if unknown:
            raise ScheduleError(f"unknown schedule keys: {sorted(unknown)}")
        version = data.get("version", SCHEDULE_SCHEMA_VERSION)
        if version != SCHEDULE_SCHEMA_VERSION:
            raise ScheduleError(f"unsupported schedule version {version}")
        try:
            segments = []
            for i, seg in enumerate(data["segments"]):
                extra = set(seg) - {"duration", "laser_amplitude", "couplings"}
                if extra:
                    raise ScheduleError(f"segments[{i}]: unknown keys {sorted(extra)}")
                segments.append(Segment(float(seg["duration"]), float(seg["laser_amplitude"]), seg["couplings"]))
            return cls(tuple(segments), float(data["omega_cavity"]), tuple(data["omega_atoms"]))
        except KeyError as exc:
            raise ScheduleError(f"missing schedule field {exc}") from None

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ControlSchedule":
        return cls.from_dict(yaml.safe_load(text))


@dataclass(frozen=True)
class CouplingCoefficients:
    """Linear coefficients ``I_n`` and bilinear coefficients ``I_nm`` (full matrix)."""

    linear: np.ndarray
    bilinear: np.ndarray
    evaluated_at: float = float("nan")
    excitation_bound: float = EXCITATION_BOUND

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=complex).reshape(-1)
        N = lin.size
        bil = self.bilinear
        bil = np.zeros((N, N), complex) if bil is None else np.asarray(bil, dtype=complex)
        if bil.shape != (N, N):
            raise ValueError(f"bilinear matrix must be {N}x{N}")
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(bil))):
            raise ValueError("coefficients must be finite")
        lin.setflags(write=False)
        bil.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "bilinear", bil)

    @classmethod
    def uniform(cls, num_atoms: int, c: complex, pair: complex = 0.0) -> "CouplingCoefficients":
        bil = np.full((num_atoms, num_atoms), pair, dtype=complex)
        np.fill_diagonal(bil, 0.0)
        return cls(np.full(num_atoms, c, dtype=complex), bil)

    @property
    def num_atoms(self) -> int:
        return self.linear.size

    def pair_terms(self) -> np.ndarray:
        """Coefficient of ``s_n s_m`` for ``n < m`` in the upper triangle: ``I_nm + I_mn``.

        The antisymmetric part of ``I_nm`` multiplies commuting variables and
        drops out; the diagonal multiplies ``s_n**2 = 0``.
        """
        sym = self.bilinear + self.bilinear.T
        return np.triu(sym, k=1)

    @property
    def antisymmetric_part(self) -> np.ndarray:
        return 0.5 * (self.bilinear - self.bilinear.T)

    def excitation_estimate(self) -> np.ndarray:
        """Lowest-order excitation probability per atom, ``|I_n|^2 + sum_m |I_nm + I_mn|^2``."""
        pairs = np.abs(self.pair_terms()) ** 2
        pairs = pairs + pairs.T
        return np.abs(self.linear) ** 2 + pairs.sum(axis=1)

    @property
    def flagged(self) -> bool:
        return bool(np.max(self.excitation_estimate(), initial=0.0) > self.excitation_bound)

    def permuted(self, perm: Sequence[int]) -> "CouplingCoefficients":
        """Atom ``n`` becomes atom ``perm[n-1]``."""
        idx = np.empty(self.num_atoms, int)
        for old, new in enumerate(perm):
            idx[new - 1] = old
        return CouplingCoefficients(self.linear[idx], self.bilinear[np.ix_(idx, idx)], self.evaluated_at)

    def to_csv(self) -> str:
        """Rows ``n,m,re,im``; ``m = 0`` marks a linear coefficient."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "m", "re", "im"])
        for n, c in enumerate(self.linear, 1):
            w.writerow([n, 0, _fmt(c.real), _fmt(c.imag)])
        N = self.num_atoms
        for n in range(N):
            for m in range(N):
                c = self.bilinear[n, m]
                w.writerow([n + 1, m + 1, _fmt(c.real), _fmt(c.imag)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CouplingCoefficients":
        rows = list(csv.DictReader(io.StringIO(text)))
        N = max(int(r["n"]) for r in rows)
        lin = np.zeros(N, complex)
        bil = np.zeros((N, N), complex)
        for r in rows:
            n, m = int(r["n"]), int(r["m"])
            c = complex(float(r["re"]), float(r["im"]))
            if m == 0:
                lin[n - 1] = c
            else:
                bil[n - 1, m - 1] = c
        return cls(lin, bil)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _phi1(z: complex) -> complex:
    """``(exp(z) - 1) / z`` with the removable singularity filled in."""
    if abs(z) < 1e-6:
        return 1 + z / 2 + z * z / 6
    return np.expm1(z) / z


def _nested(x: complex, y: complex) -> complex:
    """``int_0^1 ds exp(x s) int_0^s exp(y r) dr`` via a 3x3 exponential."""
    M = np.array([[0, 1, 0], [0, x, 1], [0, 0, x + y]], dtype=complex)
    return expm(M)[0, 2]


def integrate_coefficients(s: ControlSchedule, ordering: str = "n_first") -> CouplingCoefficients:
    """Closed-form ``I_n`` and ``I_nm`` for a piecewise-constant schedule.

    ``ordering='n_first'`` pairs ``C_n`` with the earlier time ``theta`` and
    ``C_m`` with ``tau``; ``'m_first'`` swaps the two couplings while keeping
    the exponent.  The dense propagator agrees with ``'n_first'``.
    """
    if ordering not in ("n_first", "m_first"):
        raise ValueError(f"ordering must be 'n_first' or 'm_first', got {ordering!r}")
    N = s.num_atoms
    T = s.total_time
    w0 = s.omega_cavity
    wn = np.asarray(s.omega_atoms)
    starts = s.boundaries()[:-1]
    amps = s.amplitudes()
    beta = w0 + wn  # theta-phase of the photon-emitting step
    alpha = wn - w0  # tau-phase of the photon-absorbing step

    def seg_integral(amp, omega, t0, dt):
        return amp * np.exp(1j * omega * t0) * dt * _phi1(1j * omega * dt)

    # running int_0^{t_j} E C_n exp(i beta_n theta) for the linear terms
    cumulative = np.zeros(N, complex)
    # same with the theta-coupling of the chosen ordering, per (n, m)
    inner_acc = np.zeros((N, N), complex)
    bil = np.zeros((N, N), complex)
    for j, seg in enumerate(s.segments):
        t0, dt = starts[j], seg.duration
        a = amps[j]
        theta_amp = a[:, None] if ordering == "n_first" else a[None, :]
        tau_amp = a[None, :] if ordering == "n_first" else a[:, None]
        theta_amp = np.broadcast_to(theta_amp, (N, N))
        tau_amp = np.broadcast_to(tau_amp, (N, N))
        for n in range(N):
            for m in range(N):
                if tau_amp[n, m] == 0:
                    continue
                f = seg_integral(tau_amp[n, m], alpha[m], t0, dt)
                bil[n, m] += f * inner_acc[n, m]
                if theta_amp[n, m] != 0:
                    inner = _nested(1j * alpha[m] * dt, 1j * beta[n] * dt)
                    bil[n, m] += tau_amp[n, m] * theta_amp[n, m] * np.exp(1j * (alpha[m] + beta[n]) * t0) * dt * dt * inner
        for n in range(N):
            for m in range(N):
                if theta_amp[n, m] != 0:
                    inner_acc[n, m] += seg_integral(theta_amp[n, m], beta[n], t0, dt)
            cumulative[n] += seg_integral(a[n], beta[n], t0, dt)
    lin = 1j * np.exp(-1j * beta * T) * cumulative
    bil *= np.exp(-1j * (wn[:, None] + wn[None, :]) * T)
    return CouplingCoefficients(lin, bil, evaluated_at=T)


# -- inverse problem ---------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """One field-on interval: the listed atoms sit in the cavity with the given coupling."""

    atoms: tuple[int, ...]
    duration: float
    coupling: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(int(a) for a in self.atoms))
        if not self.duration > 0:
            raise ScheduleError("window duration must be positive")


@dataclass
class ScheduleSolution:
    schedule: ControlSchedule
    amplitudes: np.ndarray
    residual: float
    condition_number: float
    targeted: list[tuple[int, ...]] = field(default_factory=list)


def _template_schedule(template: Sequence[Window], amplitudes, N, omega_cavity, omega_atoms):
    segs = []
    for win, amp in zip(template, amplitudes):
        couplings = [win.coupling if (n + 1) in win.atoms else 0.0 for n in range(N)]
        segs.append(Segment(win.duration, float(amp), couplings))
    return ControlSchedule(tuple(segs), omega_cavity, tuple(omega_atoms))


def coefficient_vector(c: CouplingCoefficients, keys: Sequence[tuple[int, ...]]) -> np.ndarray:
    """Pick ``I_n`` for keys ``(n,)`` and ``I_nm + I_mn`` for keys ``(n, m)``."""
    pairs = c.pair_terms()
    out = []
    for key in keys:
        if len(key) == 1:
            out.append(c.linear[key[0] - 1])
        else:
            n, m = sorted(key)
            out.append(pairs[n - 1, m - 1])
    return np.array(out, complex)


def default_keys(N: int) -> list[tuple[int, ...]]:
    keys: list[tuple[int, ...]] = [(n,) for n in range(1, N + 1)]
    keys += [(n, m) for n in range(1, N + 1) for m in range(n + 1, N + 1)]
    return keys


def solve_schedule(
    target: CouplingCoefficients,
    template: Sequence[Window],
    omega_cavity: float,
    omega_atoms: Sequence[float],
    targets: Iterable[tuple[int, ...]] | None = None,
    max_condition: float = 1e12,
) -> ScheduleSolution:
    """Laser amplitude per window so the schedule reproduces the targeted coefficients.

    ``targets`` lists keys ``(n,)`` for ``I_n`` and ``(n, m)`` for the pair
    coefficient; by default all ``N(N+1)/2`` of them.  Linear coefficients are
    linear in the window amplitudes and pair coefficients quadratic, so the
    system is solved by least squares seeded from the per-window linearisation.
    """
    N = target.num_atoms
    keys = [tuple(k) for k in (default_keys(N) if targets is None else targets)]
    W = len(template)
    if W < len(keys):
        raise SingularScheduleError(
            f"{W} windows cannot fix {len(keys)} coefficients", float("inf")
        )
    goal = coefficient_vector(target, keys)
    scale = max(np.max(np.abs(goal), initial=0.0), 1e-300)

    def coeffs(x):
        return coefficient_vector(
            integrate_coefficients(_template_schedule(template, x, N, omega_cavity, omega_atoms)), keys
        )

    if not np.any(goal):
        x = np.zeros(W)
        sched = _template_schedule(template, x, N, omega_cavity, omega_atoms)
        return ScheduleSolution(sched, x, 0.0, 1.0, keys)

    def resid(x):
        d = (coeffs(x) - goal) / scale
        return np.concatenate([d.real, d.imag])

    starts = _initial_guesses(template, keys, goal, N, omega_cavity, omega_atoms)
    best = None
    for x0 in starts:
        sol = least_squares(resid, x0, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if best is None or sol.cost < best.cost:
            best = sol
    J = best.jac
    sv = np.linalg.svd(J, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if cond > max_condition:
        raise SingularScheduleError("window template gives a singular coefficient map", cond)
    residual = float(np.linalg.norm(coeffs(best.x) - goal) / np.linalg.norm(goal))
    sched = _template_schedule(template, best.x, N, omega_cavity, omega_atoms)
    return ScheduleSolution(sched, best.x, residual, cond, keys)


def _initial_guesses(template, keys, goal, N, w0, wn):
    W = len(template)
    lin_cols = []
    pair_cols = []
    for w in range(W):
        unit = np.zeros(W)
        unit[w] = 1.0
        c = coefficient_vector(integrate_coefficients(_template_schedule(template, unit, N, w0, wn)), keys)
        lin_cols.append([c[i] if len(k) == 1 else 0 for i, k in enumerate(keys)])
        pair_cols.append([c[i] if len(k) == 2 else 0 for i, k in enumerate(keys)])
    L = np.array(lin_cols).T
    Q = np.array(pair_cols).T
    guesses = []
    for A, quadratic in ((Q, True), (L, False)):
        if not np.any(A):
            continue
        stacked = np.vstack([A.real, A.imag])
        rhs = np.concatenate([goal.real, goal.imag])
        y = np.linalg.lstsq(stacked, rhs, rcond=None)[0]
        guesses.append(np.sqrt(np.abs(y)) if quadratic else y)
    scale = np.sqrt(np.max(np.abs(goal)))
    guesses.append(np.full(W, scale))
    return guesses


# -- regime classification ------------------------------------------------------------------


@dataclass
class ResonanceReport:
    labels: list[str]
    detuning_time: np.ndarray
    predicted_ratio: np.ndarray
    measured_ratio: np.ndarray

    def resonant_atoms(self) -> list[int]:
        return [n + 1 for n, lab in enumerate(self.labels) if lab == "resonant"]


def resonance_report(s: ControlSchedule, threshold: float = RESONANCE_THRESHOLD) -> ResonanceReport:
    """Label atoms resonant when ``|w0 + w_n| T <= threshold``.

    ``predicted_ratio`` estimates ``|I_nm| / |I_n|`` as ``max|E C| / |w0 - w_n|``:
    the pair integral carries the fast ``w0 - w_m`` phase while the linear one
    does not.  ``measured_ratio`` is the largest ``|I_nm + I_mn| / |I_n|`` from
    the exact integrals.
    """
    T = s.total_time
    w0 = s.omega_cavity
    wn = np.asarray(s.omega_atoms)
    dt = np.abs(w0 + wn) * T
    labels = ["resonant" if x <= threshold else "detuned" for x in dt]
    amp = np.max(np.abs(s.amplitudes()), axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        predicted = np.where(np.abs(w0 - wn) > 0, amp / np.abs(w0 - wn), np.inf)
    c = integrate_coefficients(s)
    pairs = np.abs(c.pair_terms())
    pairs = pairs + pairs.T
    with np.errstate(divide="ignore", invalid="ignore"):
        measured = np.where(np.abs(c.linear) > 0, pairs.max(axis=1, initial=0.0) / np.abs(c.linear), np.inf)
    return ResonanceReport(labels, dt, predicted, measured)


__all__ = [
    "ControlSchedule",
    "CouplingCoefficients",
    "ResonanceReport",
    "ScheduleError",
    "ScheduleSolution",
    "Segment",
    "SingularScheduleError",
    "Window",
    "coefficient_vector",
    "default_keys",
    "integrate_coefficients",
    "resonance_report",
    "solve_schedule",
]
