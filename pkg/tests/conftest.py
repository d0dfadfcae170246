import math

import numpy as np
import pytest
from scipy.linalg import expm

from nilcavity.nilpotent import NilpotentPolynomial


def operator_matrix(poly: NilpotentPolynomial, fock_cutoff: int) -> np.ndarray:
    """Dense operator for ``poly`` with truncated ``a^+`` and per-atom raising matrices.

    Basis ordering matches ``to_dense``: index ``k * 2**N + mask``.
    """
    N = poly.num_atoms
    L = fock_cutoff
    dim = 1 << N
    adag = np.diag(np.sqrt(np.arange(1, L)), -1)
    raise_ = []
    for n in range(1, N + 1):
        op = np.zeros((dim, dim))
        bit = 1 << (n - 1)
        for m in range(dim):
            if not m & bit:
                op[m | bit, m] = 1.0
        raise_.append(op)
    total = np.zeros((L * dim, L * dim), complex)
    for mono, c in poly:
        atom_op = np.eye(dim)
        for n in mono.atoms:
            atom_op = raise_[n - 1] @ atom_op
        total += c * np.kron(np.linalg.matrix_power(adag, mono.photon_power), atom_op)
    return total


def dense_exp_on_vacuum(poly: NilpotentPolynomial, fock_cutoff: int) -> np.ndarray:
    op = operator_matrix(poly, fock_cutoff)
    vac = np.zeros(op.shape[0], complex)
    vac[0] = 1.0
    return (expm(op) @ vac).reshape(fock_cutoff, 1 << poly.num_atoms)


def random_poly(rng, num_atoms, photon_cap, n_terms, max_atoms=None, zero_constant=True, scale=0.5):
    terms = {}
    max_atoms = num_atoms if max_atoms is None else max_atoms
    for _ in range(n_terms):
        size = rng.integers(0, max_atoms + 1)
        atoms = tuple(sorted(rng.choice(np.arange(1, num_atoms + 1), size=size, replace=False).tolist()))
        k = int(rng.integers(0, photon_cap + 1))
        if zero_constant and not atoms and k == 0:
            continue
        terms[(atoms, k)] = scale * (rng.normal() + 1j * rng.normal())
    return NilpotentPolynomial(num_atoms, photon_cap, terms)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def fact(k):
    return math.factorial(k)


# acceptance gate: one line per criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
