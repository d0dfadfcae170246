"""Field manipulation followed by photon detection.

Each primitive maps a :class:`~nilcavity.state.JointState` to the normalised
atomic state left behind once the detector fires, together with the
probability of that detector outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .nilpotent import NilpotentPolynomial, poly_exp
from .state import JointState, exponent


class ResonanceCollisionError(ValueError):
    """An intermediate Fock level is exactly resonant with the drive."""


class InfeasibleProjectionError(ValueError):
    """The requested projection cannot be realised on this state."""


@dataclass(frozen=True)
class PostSelectedState:
    polynomial: NilpotentPolynomial
    success_probability: float
    primitive: str
    details: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.polynomial.photon_degree > 0:
            raise ValueError("post-selected state still contains the photon variable")
        if not -1e-12 <= self.success_probability <= 1 + 1e-12:
            raise ValueError(f"success probability {self.success_probability} outside [0, 1]")

    @property
    def num_atoms(self) -> int:
        return self.polynomial.num_atoms

    def vector(self) -> np.ndarray:
        return self.polynomial.atomic_vector()


def _normalized(poly: NilpotentPolynomial) -> tuple[NilpotentPolynomial, float]:
    nsq = poly.conj_norm_sq()
    if nsq <= 0:
        raise InfeasibleProjectionError("projection annihilates the state")
    return poly / math.sqrt(nsq), nsq


def _atomic_part(s: JointState) -> NilpotentPolynomial:
    """``O`` and ``G`` as photon-free polynomials."""
    f = exponent(s.coefficients)
    return f.shell(1), f.shell(0)


def measure_photon_number(s: JointState, d: int) -> PostSelectedState:
    """Detect ``d`` photons.

    The ``(a^+)**d`` shell becomes the atomic amplitude after the factor
    ``sqrt(d!)`` from ``<d|(a^+)**d|0>``.
    """
    if not 0 <= d <= s.polynomial.photon_cap:
        raise ValueError(f"photon count {d} outside 0..{s.polynomial.photon_cap}")
    shell = s.polynomial.shell(d) * math.sqrt(math.factorial(d))
    nsq = shell.conj_norm_sq()
    prob = nsq / s.norm**2
    if nsq == 0:
        return PostSelectedState(shell, 0.0, f"measure[{d}]")
    return PostSelectedState(shell / math.sqrt(nsq), prob, f"measure[{d}]")


def _oracle_vacuum(s: JointState, op) -> tuple[np.ndarray, float]:
    dense = oracle.DenseState.from_polynomial(s.polynomial, s.polynomial.photon_cap + 1)
    out = oracle.converged_field_op(op, dense)
    row = out.grid[0]
    p = float(np.vdot(row, row).real)
    return row, p


def displace_then_vacuum(s: JointState, lam: complex, check_oracle: bool = True) -> PostSelectedState:
    """Displace the field by ``lam`` and detect the vacuum.

    ``<0|D(lam) exp(a^+ O)|0> = exp(-|lam|^2/2) exp(-lam* O)``, so the atoms
    are left in ``exp(-lam* O + G)|0>``.  The success probability is taken
    from the dense displacement operator; the closed-form value is kept in
    ``details`` for comparison.
    """
    O, G = _atomic_part(s)
    poly, nsq = _normalized(poly_exp(-np.conj(lam) * O + G))
    closed = math.exp(-abs(lam) ** 2) * nsq / s.norm**2
    details = {"lambda": complex(lam), "probability_closed_form": closed}
    prob = closed
    if check_oracle:
        row, prob = _oracle_vacuum(s, oracle.Displace(lam))
        details["fidelity_oracle"] = oracle.fidelity(row, poly.atomic_vector())
        details["probability_oracle"] = prob
    return PostSelectedState(poly, min(prob, 1.0), "displace", details)


@dataclass(frozen=True)
class SqueezeParams:
    """Squeezing ``exp[(g a^2 - g a^+^2) t]`` with real ``g``.

    ``zeta``, ``eta`` and ``r`` are the published closed-form parameters;
    ``zeta_exact`` and ``prefactor_exact`` come from the vacuum matrix element
    of the squeezing operator, ``<0|S = sech(2gt)**0.5 <0| exp(tanh(2gt) a^2 / 2)``.
    """

    g: float
    t: float

    def __post_init__(self):
        g = complex(self.g)
        if g.imag != 0:
            raise ValueError("squeezing rate must be real")
        object.__setattr__(self, "g", g.real)

    @property
    def gt(self) -> float:
        return self.g * self.t

    @property
    def zeta(self) -> float:
        return 2 * math.tanh(self.gt) - self.gt

    @property
    def eta(self) -> float:
        return self.gt

    @property
    def r(self) -> float:
        return math.sqrt(2 * math.pi) / math.sqrt(1 + math.exp(2 * self.gt))

    @property
    def zeta_exact(self) -> float:
        return 0.5 * math.tanh(2 * self.gt)

    @property
    def prefactor_exact(self) -> float:
        return 1 / math.sqrt(math.cosh(2 * self.gt))


def squeeze_then_vacuum(
    s: JointState, p: SqueezeParams, zeta: str = "published", check_oracle: bool = True
) -> PostSelectedState:
    """Squeeze the field and detect the vacuum: atoms end in ``exp(zeta O^2 + G)|0>``.

    ``zeta='published'`` uses ``2 tanh(gt) - gt``, ``'exact'`` uses ``tanh(2gt)/2``.
    Both agree to first order in ``gt``.  The success probability comes from
    the dense squeezing operator.
    """
    if zeta not in ("published", "exact"):
        raise ValueError(f"zeta must be 'published' or 'exact', got {zeta!r}")
    O, G = _atomic_part(s)
    z = p.zeta if zeta == "published" else p.zeta_exact
    poly, _ = _normalized(poly_exp(z * O * O + G))
    exact_poly = poly_exp(p.zeta_exact * O * O + G)
    closed = p.prefactor_exact**2 * exact_poly.conj_norm_sq() / s.norm**2
    details = {"gt": p.gt, "zeta": z, "zeta_exact": p.zeta_exact, "probability_closed_form": closed}
    prob = closed
    if check_oracle:
        row, prob = _oracle_vacuum(s, oracle.Squeeze(p.g, p.t))
        details["fidelity_oracle"] = oracle.fidelity(row, poly.atomic_vector())
        details["probability_oracle"] = prob
    return PostSelectedState(poly, min(prob, 1.0), "squeeze", details)


def kerr_project(s: JointState, B: complex, C: complex, gap: int | None = None) -> PostSelectedState:
    """Project the field onto ``B|0> + C|gap>`` (``gap`` defaults to ``N``).

    The atoms are left in ``B* <0|Psi> + C* <gap|Psi>``; the second term is the
    ``(a^+)**gap`` shell times ``sqrt(gap!)``.
    """
    N = s.num_atoms
    gap = N if gap is None else gap
    if gap > s.polynomial.photon_cap:
        raise InfeasibleProjectionError(f"photon gap {gap} exceeds photon cap {s.polynomial.photon_cap}")
    nrm = math.hypot(abs(B), abs(C))
    if nrm == 0:
        raise ValueError("B and C cannot both vanish")
    B, C = B / nrm, C / nrm
    vac = s.polynomial.shell(0)
    top = s.polynomial.shell(gap) * math.sqrt(math.factorial(gap))
    poly, nsq = _normalized(np.conj(B) * vac + np.conj(C) * top)
    return PostSelectedState(poly, nsq / s.norm**2, "kerr", {"B": complex(B), "C": complex(C), "gap": gap})


def ghz_condition(linear, formula: str = "derived") -> tuple[complex, complex]:
    """Normalised ``(B, C)`` for which :func:`kerr_project` yields GHZ.

    ``derived``: ``B* = C* sqrt(N!) prod I_n``, the condition that balances
    ``<N|Psi> = sqrt(N!) prod(I_n s_n)`` against the vacuum term.
    ``published``: ``B* sqrt(N!) = C* prod I_n`` as published, which drops the
    ``N!`` from expanding ``O**N``.
    """
    I = np.asarray(linear, dtype=complex)
    N = I.size
    prod = complex(np.prod(I))
    if prod == 0:
        raise InfeasibleProjectionError("some I_n vanish: the N-photon shell is empty")
    if formula == "derived":
        b_conj, c_conj = math.sqrt(math.factorial(N)) * prod, 1.0
    elif formula == "published":
        b_conj, c_conj = prod / math.sqrt(math.factorial(N)), 1.0
    else:
        raise ValueError(f"formula must be 'derived' or 'published', got {formula!r}")
    nrm = math.hypot(abs(b_conj), abs(c_conj))
    return np.conj(b_conj) / nrm, np.conj(c_conj) / nrm


@dataclass(frozen=True)
class KerrParams:
    """Kerr medium ``(wc - wL) n + kappa (n^2 + E^3 (a + a^+))``.

    Only ``|0>`` and ``|gap>`` are degenerate, which fixes
    ``wL = wc + kappa * gap``; passing an inconsistent ``omega_laser`` raises.
    """

    kappa: float
    laser_amplitude: float
    gap: int
    omega_cavity: float = 0.0
    omega_laser: float | None = None

    def __post_init__(self):
        if self.gap < 1:
            raise ValueError("photon gap must be at least 1")
        if self.kappa == 0:
            raise ValueError("kappa must be nonzero")
        resonant = self.omega_cavity + self.kappa * self.gap
        if self.omega_laser is None:
            object.__setattr__(self, "omega_laser", resonant)
        elif abs(self.omega_laser - resonant) > 1e-12 * max(1.0, abs(resonant)):
            raise ValueError(
                f"resonance (wc - wL) N + kappa N^2 = 0 needs omega_laser = {resonant}, got {self.omega_laser}"
            )

    @property
    def detuning(self) -> float:
        return self.omega_cavity - self.omega_laser

    def level_energies(self, L: int) -> np.ndarray:
        n = np.arange(L, dtype=float)
        return self.detuning * n + self.kappa * n * n

    def coupling(self, formula: str = "effective") -> float:
        """``V_0N``.

        ``effective``: adiabatic elimination of levels ``1..N-1`` with energies
        ``kappa n (n - N)`` and hopping ``kappa E^3 sqrt(n+1)`` gives
        ``kappa E^(3N) sqrt(N!) / ((N-1)!)**2``.
        ``published``: ``E^(3N) / (sqrt(N!) prod_{n=1..N} (n - wL/kappa))`` as
        published; raises on a pole.
        """
        N, k, E = self.gap, self.kappa, self.laser_amplitude
        if formula == "effective":
            return k * E ** (3 * N) * math.sqrt(math.factorial(N)) / math.factorial(N - 1) ** 2
        if formula == "published":
            ratio = self.omega_laser / k
            factors = [n - ratio for n in range(1, N + 1)]
            if any(abs(f) < 1e-12 for f in factors):
                raise ResonanceCollisionError(f"wL/kappa = {ratio} hits an integer in 1..{N}")
            return E ** (3 * N) / (math.sqrt(math.factorial(N)) * float(np.prod(factors)))
        raise ValueError(f"formula must be 'effective' or 'published', got {formula!r}")

    def operator(self, t: float) -> oracle.Kerr:
        return oracle.Kerr(self.kappa, self.laser_amplitude, self.detuning, t)


def kerr_dynamics_params(k: KerrParams, ratio: complex, formula: str = "effective") -> tuple[float, float]:
    """``(V_0N, t_Kerr)`` with ``tan(t V) = |C*/B*|`` on the smallest positive branch.

    The two-level rotation ``cos(Vt)|0><0| - i sin(Vt)|0><N|`` fixes only the
    magnitude of the ratio; its phase is set by the ``-i`` of the rotation.
    """
    V = k.coupling(formula)
    if V == 0:
        raise ResonanceCollisionError("vanishing multiphoton coupling")
    x = math.atan(abs(ratio))
    return V, x / abs(V)


def kerr_two_level(V: float, t: float) -> np.ndarray:
    """Effective rotation in the ``{|0>, |N>}`` subspace."""
    c, s = math.cos(V * t), math.sin(V * t)
    return np.array([[c, -1j * s], [-1j * s, c]])


__all__ = [
    "InfeasibleProjectionError",
    "KerrParams",
    "PostSelectedState",
    "ResonanceCollisionError",
    "SqueezeParams",
    "displace_then_vacuum",
    "ghz_condition",
    "kerr_dynamics_params",
    "kerr_project",
    "kerr_two_level",
    "measure_photon_number",
    "squeeze_then_vacuum",
]
