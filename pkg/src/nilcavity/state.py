"""Joint atoms+field state ``exp(a^+ O + G)|0>`` and its normalisation.

``O = sum_n I_n s_n`` and ``G = sum_{n<m} (I_nm + I_mn) s_n s_m`` with ``s_n``
the raising variable of atom ``n``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .coupling import CouplingCoefficients
from .nilpotent import NilpotentPolynomial, _popcount, atoms_to_mask, poly_exp

GAUSSIAN_MAX_CONDITION = 1e12


class DegenerateRegimeError(ValueError):
    """The Gaussian normalisation matrix is singular or nearly so."""


@dataclass(frozen=True)
class JointState:
    """Unnormalised expansion (vacuum coefficient 1) plus its exact norm."""

    polynomial: NilpotentPolynomial
    norm: float
    coefficients: CouplingCoefficients | None = None

    @property
    def num_atoms(self) -> int:
        return self.polynomial.num_atoms

    def normalized(self) -> NilpotentPolynomial:
        return self.polynomial / self.norm

    def summary(self) -> dict:
        probs = [excitation_probability(self, n) for n in range(1, self.num_atoms + 1)]
        out = {
            "num_atoms": self.num_atoms,
            "norm": self.norm,
            "vacuum_probability": 1.0 / self.norm**2,
            "excitation_probabilities": probs,
            "terms": len(self.polynomial),
        }
        if self.coefficients is not None:
            out["excitation_estimate_flagged"] = self.coefficients.flagged
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def exponent(c: CouplingCoefficients) -> NilpotentPolynomial:
    """``a^+ O + G`` as a polynomial with photon cap ``N``."""
    N = c.num_atoms
    terms: dict = {}
    for n, v in enumerate(c.linear, 1):
        if v != 0:
            terms[((n,), 1)] = v
    pairs = c.pair_terms()
    for n in range(N):
        for m in range(n + 1, N):
            if pairs[n, m] != 0:
                terms[((n + 1, m + 1), 0)] = pairs[n, m]
    return NilpotentPolynomial(N, N, terms)


def build_joint_state(c: CouplingCoefficients) -> JointState:
    """Expand ``exp(a^+ O + G)|0>`` exactly and attach its norm.

    >>> st = build_joint_state(CouplingCoefficients.uniform(1, 0.5))
    >>> round(st.norm**2, 12)
    1.25
    """
    poly = poly_exp(exponent(c))
    masks, powers, _ = poly.arrays()
    # a^+ only ever enters together with one s_n
    assert np.all(powers <= _popcount(masks)), "photon power exceeds atom degree"
    return JointState(poly, _norm_of(poly), c)


def _norm_of(poly: NilpotentPolynomial) -> float:
    return float(np.sqrt(poly.conj_norm_sq()))


def exact_norm(s: JointState | NilpotentPolynomial) -> float:
    """``sqrt(sum |coeff|^2 k!)`` over all monomials."""
    poly = s.polynomial if isinstance(s, JointState) else s
    return _norm_of(poly)


def excitation_probability(s: JointState | NilpotentPolynomial, atom: int) -> float:
    """Probability that ``atom`` (1-based) is excited, from the exact expansion."""
    poly = s.polynomial if isinstance(s, JointState) else s
    if not 1 <= atom <= poly.num_atoms:
        raise IndexError(f"atom {atom} out of range 1..{poly.num_atoms}")
    masks, powers, coeffs = poly.arrays()
    w = np.abs(coeffs) ** 2 * _factorials(powers)
    bit = atoms_to_mask([atom])
    total = w.sum()
    return float(w[(masks & bit) != 0].sum() / total) if total > 0 else 0.0


def _factorials(k: np.ndarray) -> np.ndarray:
    from scipy.special import factorial

    return factorial(k, exact=False)


@dataclass(frozen=True)
class GaussianNormInputs:
    M: np.ndarray
    V: np.ndarray
    B: np.ndarray


def gaussian_norm_inputs(c: CouplingCoefficients) -> GaussianNormInputs:
    """Assemble ``M``, ``V`` and ``B`` for the Gaussian-integral normalisation estimate.

    ``M`` is ``2N x 2N``; the swap matrix ``V = [[0, 1_N], [1_N, 0]]`` must be
    ``2N x 2N`` as well for ``B = [[V, V], [V, V - M^-1]]`` to be ``4N x 4N``.
    """
    I = c.linear
    J = c.bilinear
    N = c.num_atoms
    outer = 0.5 * np.outer(I, I.conj())
    M = np.block([[outer, J], [J.conj().T, outer.conj()]])
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > GAUSSIAN_MAX_CONDITION:
        raise DegenerateRegimeError(f"Gaussian normalisation matrix is singular (condition number {cond:.3g})")
    eye = np.eye(N)
    zero = np.zeros((N, N))
    V = np.block([[zero, eye], [eye, zero]])
    B = np.block([[V, V], [V, V - np.linalg.inv(M)]])
    return GaussianNormInputs(M, V, B)


def gaussian_norm(c: CouplingCoefficients) -> complex:
    """``det(M^-1) / det(B)``: the Gaussian-integral estimate of ``|A|^2``.

    Diagnostic only.  The Schur complement gives
    ``det B = det V * det(-M^-1)``, so the ratio equals ``det V = (-1)^N`` for
    every admissible input and carries no information about the couplings.
    """
    g = gaussian_norm_inputs(c)
    sign_b, logdet_b = np.linalg.slogdet(g.B)
    sign_m, logdet_m = np.linalg.slogdet(g.M)
    return complex(sign_m.conjugate() / sign_b * np.exp(-logdet_m - logdet_b))
