"""Polynomials in commuting nilpotent atomic raising variables plus one photon variable.

Atom ``n`` (1-based) is the variable ``s_n`` with ``s_n**2 = 0``; the photon
variable ``a`` is an ordinary commuting variable whose degree is capped at
``photon_cap``.  A polynomial ``F`` stands for the ket ``F |vacuum>``.

Internally a monomial is the pair ``(mask, k)`` where bit ``n - 1`` of ``mask``
marks atom ``n`` and ``k`` is the photon power.  The public surface uses
:class:`Monomial` with 1-based atom indices.
"""

from __future__ import annotations

import math
from itertools import combinations
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

PRUNE_EPS = 1e-300
SEPARABILITY_TOL = 1e-12
SYMMETRY_TOL = 1e-12


class PhotonOverflowError(ValueError):
    """A product produced a photon power above the polynomial's cap."""


class NilpotentialError(ValueError):
    """Raised when exp/log preconditions on the constant term fail."""


class SymmetryError(ValueError):
    """Input to the collective reduction is not permutation symmetric."""


class Monomial(NamedTuple):
    atoms: tuple[int, ...]
    photon_power: int = 0


def atoms_to_mask(atoms: Iterable[int]) -> int:
    mask = 0
    for n in atoms:
        if n < 1:
            raise ValueError(f"atom indices are 1-based, got {n}")
        bit = 1 << (n - 1)
        if mask & bit:
            raise ValueError(f"atom {n} repeated in monomial")
        mask |= bit
    return mask


def mask_to_atoms(mask: int) -> tuple[int, ...]:
    atoms = []
    n = 1
    while mask:
        if mask & 1:
            atoms.append(n)
        mask >>= 1
        n += 1
    return tuple(atoms)


def _popcount(masks: np.ndarray) -> np.ndarray:
    masks = masks.astype(np.int64)
    count = np.zeros_like(masks)
    while np.any(masks):
        count += masks & 1
        masks = masks >> 1
    return count


def _normalize_key(key, num_atoms: int) -> tuple[int, int]:
    if isinstance(key, Monomial):
        atoms, k = key
    elif (
        isinstance(key, tuple)
        and len(key) == 2
        and isinstance(key[1], (int, np.integer))
        and not isinstance(key[0], (int, np.integer))
    ):
        atoms, k = key
    else:
        atoms, k = key, 0
    mask = atoms_to_mask(atoms)
    if mask >> num_atoms:
        raise ValueError(f"monomial {key!r} uses an atom beyond num_atoms={num_atoms}")
    if k < 0:
        raise ValueError("photon power must be nonnegative")
    return mask, int(k)


class NilpotentPolynomial:
    """Sparse complex polynomial in ``num_atoms`` nilpotent variables and ``a``.

    Parameters
    ----------
    num_atoms : int
        Number of atomic variables.
    photon_cap : int, optional
        Largest photon power that may be stored; defaults to ``num_atoms``.
    terms : mapping, optional
        Keys are :class:`Monomial`, ``(atoms, photon_power)`` pairs or bare
        atom tuples (photon power 0); values are coefficients.
    """

    __slots__ = ("num_atoms", "photon_cap", "_terms")

    def __init__(self, num_atoms: int, photon_cap: int | None = None, terms: Mapping | None = None):
        if num_atoms < 0:
            raise ValueError("num_atoms must be nonnegative")
        self.num_atoms = int(num_atoms)
        self.photon_cap = self.num_atoms if photon_cap is None else int(photon_cap)
        if self.photon_cap < 0:
            raise ValueError("photon_cap must be nonnegative")
        store: dict[tuple[int, int], complex] = {}
        for key, value in (terms or {}).items():
            mask, k = _normalize_key(key, self.num_atoms)
            if k > self.photon_cap:
                raise PhotonOverflowError(f"photon power {k} exceeds cap {self.photon_cap}")
            store[(mask, k)] = store.get((mask, k), 0.0) + complex(value)
        self._terms = {key: c for key, c in store.items() if abs(c) > PRUNE_EPS}

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _raw(cls, num_atoms, photon_cap, terms: dict) -> "NilpotentPolynomial":
        obj = cls.__new__(cls)
        obj.num_atoms = num_atoms
        obj.photon_cap = photon_cap
        obj._terms = terms
        return obj

    @classmethod
    def zero(cls, num_atoms, photon_cap=None):
        return cls(num_atoms, photon_cap)

    @classmethod
    def constant(cls, value, num_atoms, photon_cap=None):
        return cls(num_atoms, photon_cap, {(): value})

    @classmethod
    def sigma(cls, n, num_atoms, photon_cap=None, coeff=1.0):
        return cls(num_atoms, photon_cap, {(n,): coeff})

    @classmethod
    def photon(cls, num_atoms, photon_cap=None, power=1, coeff=1.0):
        return cls(num_atoms, photon_cap, {Monomial((), power): coeff})

    @classmethod
    def from_arrays(cls, num_atoms, photon_cap, masks, powers, coeffs, prune=PRUNE_EPS):
        keep = np.abs(coeffs) > prune
        terms = {
            (int(m), int(k)): complex(c)
            for m, k, c in zip(masks[keep], powers[keep], coeffs[keep])
        }
        return cls._raw(num_atoms, photon_cap, terms)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(masks, photon_powers, coefficients)`` arrays."""
        if not self._terms:
            return (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, complex))
        keys = np.array(list(self._terms.keys()), dtype=np.int64)
        coeffs = np.array(list(self._terms.values()), dtype=complex)
        return keys[:, 0], keys[:, 1], coeffs

    # -- inspection -------------------------------------------------------------

    @property
    def terms(self) -> dict[Monomial, complex]:
        return {Monomial(mask_to_atoms(m), k): c for (m, k), c in self._sorted_items()}

    def _sorted_items(self):
        return sorted(self._terms.items(), key=lambda kv: (mask_to_atoms(kv[0][0]), kv[0][1]))

    def __iter__(self) -> Iterator[tuple[Monomial, complex]]:
        for (m, k), c in self._sorted_items():
            yield Monomial(mask_to_atoms(m), k), c

    def __len__(self) -> int:
        return len(self._terms)

    def __bool__(self) -> bool:
        return bool(self._terms)

    def coeff(self, atoms: Iterable[int] = (), photon_power: int = 0) -> complex:
        return self._terms.get((atoms_to_mask(atoms), photon_power), 0.0j)

    @property
    def constant_term(self) -> complex:
        return self._terms.get((0, 0), 0.0j)

    @property
    def photon_degree(self) -> int:
        return max((k for _, k in self._terms), default=0)

    @property
    def atom_degree(self) -> int:
        return max((bin(m).count("1") for m, _ in self._terms), default=0)

    def same_space(self, other: "NilpotentPolynomial") -> bool:
        return self.num_atoms == other.num_atoms and self.photon_cap == other.photon_cap

    def __repr__(self) -> str:
        return f"NilpotentPolynomial(num_atoms={self.num_atoms}, photon_cap={self.photon_cap}, terms={len(self)})"

    # -- arithmetic -----------------------------------------------------------------

    def _check(self, other):
        if not self.same_space(other):
            raise ValueError(
                "polynomials live in different spaces: "
                f"({self.num_atoms}, {self.photon_cap}) vs ({other.num_atoms}, {other.photon_cap})"
            )

    def __add__(self, other):
        if isinstance(other, NilpotentPolynomial):
            return poly_combine(self, other, "add")
        return self + NilpotentPolynomial.constant(other, self.num_atoms, self.photon_cap)

    __radd__ = __add__

    def __neg__(self):
        return self._raw(self.num_atoms, self.photon_cap, {k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, NilpotentPolynomial):
            return poly_combine(self, other, "mul")
        other = complex(other)
        if other == 0:
            return NilpotentPolynomial.zero(self.num_atoms, self.photon_cap)
        return self._raw(
            self.num_atoms, self.photon_cap, {k: c * other for k, c in self._terms.items()}
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / complex(other))

    def __pow__(self, n: int):
        out = NilpotentPolynomial.constant(1.0, self.num_atoms, self.photon_cap)
        for _ in range(n):
            out = out * self
        return out

    def allclose(self, other: "NilpotentPolynomial", atol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(
            abs(self._terms.get(k, 0.0) - other._terms.get(k, 0.0)) <= atol for k in keys
        )

    def max_abs_diff(self, other: "NilpotentPolynomial") -> float:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return max((abs(self._terms.get(k, 0.0) - other._terms.get(k, 0.0)) for k in keys), default=0.0)

    def chop(self, tol: float) -> "NilpotentPolynomial":
        return self._raw(
            self.num_atoms, self.photon_cap, {k: c for k, c in self._terms.items() if abs(c) > tol}
        )

    # -- structural operations ----------------------------------------------------------

    def with_photon_cap(self, cap: int) -> "NilpotentPolynomial":
        if cap < self.photon_degree:
            raise PhotonOverflowError(f"cannot lower cap to {cap}: degree {self.photon_degree} present")
        return self._raw(self.num_atoms, cap, dict(self._terms))

    def shell(self, photon_power: int) -> "NilpotentPolynomial":
        """Atomic polynomial multiplying ``a**photon_power`` (photon variable removed)."""
        return self._raw(
            self.num_atoms,
            0,
            {(m, 0): c for (m, k), c in self._terms.items() if k == photon_power},
        )

    def permute(self, perm: Sequence[int]) -> "NilpotentPolynomial":
        """Relabel atoms: atom ``n`` becomes atom ``perm[n - 1]``."""
        if sorted(perm) != list(range(1, self.num_atoms + 1)):
            raise ValueError("perm must be a permutation of 1..num_atoms")
        out = {}
        for (m, k), c in self._terms.items():
            new = atoms_to_mask(perm[a - 1] for a in mask_to_atoms(m))
            out[(new, k)] = c
        return self._raw(self.num_atoms, self.photon_cap, out)

    def conj_norm_sq(self) -> float:
        """Squared norm of ``F|vacuum>`` with ``<0|a^k a^+k|0> = k!``."""
        return float(sum(abs(c) ** 2 * math.factorial(k) for (_, k), c in self._terms.items()))

    # -- dense conversion -------------------------------------------------------------------

    def to_dense(self, fock_cutoff: int | None = None) -> np.ndarray:
        """Amplitudes as an array of shape ``(fock_cutoff, 2**num_atoms)``.

        Column index is the atom bitmask (atom ``n`` is bit ``n - 1``).  The
        coefficient of ``a**k`` is multiplied by ``sqrt(k!)``.
        """
        L = self.photon_degree + 1 if fock_cutoff is None else int(fock_cutoff)
        if L <= self.photon_degree:
            raise ValueError(f"fock_cutoff {L} too small for photon degree {self.photon_degree}")
        out = np.zeros((L, 1 << self.num_atoms), dtype=complex)
        for (m, k), c in self._terms.items():
            out[k, m] += c * math.sqrt(math.factorial(k))
        return out

    def atomic_vector(self) -> np.ndarray:
        """Length ``2**num_atoms`` amplitude vector; requires photon degree 0."""
        if self.photon_degree:
            raise ValueError("polynomial still contains the photon variable")
        return self.to_dense(1)[0]

    @classmethod
    def from_dense(cls, amplitudes: np.ndarray, num_atoms: int, photon_cap: int | None = None, tol: float = 0.0):
        amps = np.atleast_2d(np.asarray(amplitudes, dtype=complex))
        if amps.shape[1] != 1 << num_atoms:
            raise ValueError("column count must be 2**num_atoms")
        cap = amps.shape[0] - 1 if photon_cap is None else photon_cap
        terms = {}
        for k in range(amps.shape[0]):
            scale = 1.0 / math.sqrt(math.factorial(k))
            for m in np.flatnonzero(np.abs(amps[k]) > tol):
                if k > cap:
                    raise PhotonOverflowError(f"Fock level {k} exceeds cap {cap}")
                terms[(int(m), k)] = complex(amps[k, m]) * scale
        return cls._raw(num_atoms, cap, {k: c for k, c in terms.items() if abs(c) > PRUNE_EPS})

    # -- text serialization -------------------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"# num_atoms={self.num_atoms} photon_cap={self.photon_cap}"]
        for (m, k), c in self._sorted_items():
            atoms = " ".join(str(a) for a in mask_to_atoms(m))
            lines.append(f"{c.real!r} {c.imag!r} {k} {atoms}".rstrip())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, num_atoms: int | None = None, photon_cap: int | None = None):
        terms = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    name, _, value = tok.partition("=")
                    if name == "num_atoms" and num_atoms is None:
                        num_atoms = int(value)
                    elif name == "photon_cap" and photon_cap is None:
                        photon_cap = int(value)
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ValueError(f"line {lineno}: expected 're im photon_power atoms...'")
            c = complex(float(parts[0]), float(parts[1]))
            key = Monomial(tuple(int(p) for p in parts[3:]), int(parts[2]))
            terms[key] = terms.get(key, 0.0) + c
        if num_atoms is None:
            num_atoms = max((max(k.atoms, default=0) for k in terms), default=0)
        return cls(num_atoms, photon_cap, terms)


def poly_combine(p: NilpotentPolynomial, q: NilpotentPolynomial, mode: str = "mul", truncate: bool = False):
    """Exact sum (``mode="add"``) or product (``mode="mul"``).

    In a product, monomials sharing an atom vanish.  Photon powers above the
    cap raise :class:`PhotonOverflowError` unless ``truncate`` is set.
    """
    p._check(q)
    if mode == "add":
        out = dict(p._terms)
        for key, c in q._terms.items():
            s = out.get(key, 0.0) + c
            if abs(s) > PRUNE_EPS:
                out[key] = s
            else:
                out.pop(key, None)
        return NilpotentPolynomial._raw(p.num_atoms, p.photon_cap, out)
    if mode != "mul":
        raise ValueError(f"unknown mode {mode!r}")
    if not p or not q:
        return NilpotentPolynomial.zero(p.num_atoms, p.photon_cap)
    masks, ks, cs = _mul_arrays(*p.arrays(), *q.arrays(), p.num_atoms, p.photon_cap, truncate)
    return NilpotentPolynomial.from_arrays(p.num_atoms, p.photon_cap, masks, ks, cs)


def _mul_arrays(ma, ka, ca, mb, kb, cb, num_atoms, cap, truncate, chunk=512):
    size = 1 << num_atoms
    acc_re = np.zeros((cap + 1) * size)
    acc_im = np.zeros((cap + 1) * size)
    for start in range(0, len(ma), chunk):
        sm, sk, sc = ma[start : start + chunk], ka[start : start + chunk], ca[start : start + chunk]
        ok = (sm[:, None] & mb[None, :]) == 0
        k = sk[:, None] + kb[None, :]
        prod = sc[:, None] * cb[None, :]
        over = ok & (k > cap) & (prod != 0)
        if over.any():
            if not truncate:
                raise PhotonOverflowError(
                    f"product reaches photon power {int(k[over].max())} above cap {cap}"
                )
            ok &= k <= cap
        idx = k[ok] * size + (sm[:, None] | mb[None, :])[ok]
        acc_re += np.bincount(idx, weights=prod[ok].real, minlength=acc_re.size)
        acc_im += np.bincount(idx, weights=prod[ok].imag, minlength=acc_im.size)
    flat = np.flatnonzero((acc_re != 0) | (acc_im != 0))
    return flat % size, flat // size, acc_re[flat] + 1j * acc_im[flat]


def _by_degree(poly: NilpotentPolynomial) -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    masks, ks, cs = poly.arrays()
    deg = _popcount(masks) + ks
    return {int(d): (masks[deg == d], ks[deg == d], cs[deg == d]) for d in np.unique(deg)}


def poly_exp(f: NilpotentPolynomial, truncate: bool = False) -> NilpotentPolynomial:
    """Exponential of a polynomial with zero constant term.

    Uses the degree recursion ``d F_d = sum_j j f_j F_{d-j}``, which follows from
    the Euler degree operator being a derivation.  The series terminates at
    total degree ``num_atoms + photon_cap``.
    """
    if abs(f.constant_term) > 0:
        raise NilpotentialError("exp requires a zero constant term; factor it out first")
    N, cap = f.num_atoms, f.photon_cap
    fd = _by_degree(f)
    F = {0: (np.zeros(1, np.int64), np.zeros(1, np.int64), np.ones(1, complex))}
    top = N + cap
    for d in range(1, top + 1):
        parts = []
        for j, (fm, fk, fc) in fd.items():
            if j > d or (d - j) not in F:
                continue
            gm, gk, gc = F[d - j]
            parts.append(_mul_arrays(fm, fk, fc * j, gm, gk, gc, N, cap, truncate))
        merged = _merge(parts, N, cap, scale=1.0 / d)
        if merged is not None:
            F[d] = merged
    masks = np.concatenate([v[0] for v in F.values()])
    ks = np.concatenate([v[1] for v in F.values()])
    cs = np.concatenate([v[2] for v in F.values()])
    return NilpotentPolynomial.from_arrays(N, cap, masks, ks, cs)


def _merge(parts, N, cap, scale=1.0, minus=None):
    size = 1 << N
    acc = np.zeros((cap + 1) * size, complex)
    touched = False
    for m, k, c in parts:
        if len(m):
            np.add.at(acc, k * size + m, c)
            touched = True
    if minus is not None:
        m, k, c = minus
        if len(m):
            np.add.at(acc, k * size + m, c)
            touched = True
    if not touched:
        return None
    acc *= scale
    flat = np.flatnonzero(np.abs(acc) > PRUNE_EPS)
    if not len(flat):
        return None
    return flat % size, flat // size, acc[flat]


def poly_log(F: NilpotentPolynomial, truncate: bool = False) -> NilpotentPolynomial:
    """Nilpotential ``f`` with zero constant term such that ``exp(f) = F / F(vacuum)``."""
    F0 = F.constant_term
    if F0 == 0:
        raise NilpotentialError(
            "vacuum amplitude is zero; apply local operations before taking the logarithm"
        )
    N, cap = F.num_atoms, F.photon_cap
    G = _by_degree(F / F0)
    G.pop(0, None)
    f: dict[int, tuple] = {}
    for d in range(1, N + cap + 1):
        parts = []
        for j, (fm, fk, fc) in f.items():
            if (d - j) not in G:
                continue
            gm, gk, gc = G[d - j]
            parts.append(_mul_arrays(fm, fk, -fc * j / d, gm, gk, gc, N, cap, truncate))
        merged = _merge(parts, N, cap, minus=G.get(d))
        if merged is not None:
            f[d] = merged
    if not f:
        return NilpotentPolynomial.zero(N, cap)
    masks = np.concatenate([v[0] for v in f.values()])
    ks = np.concatenate([v[1] for v in f.values()])
    cs = np.concatenate([v[2] for v in f.values()])
    return NilpotentPolynomial.from_arrays(N, cap, masks, ks, cs)


# -- bipartitions and separability ------------------------------------------------------


@dataclass(frozen=True)
class Bipartition:
    part_a: frozenset[int]
    part_b: frozenset[int]

    def __init__(self, part_a: Iterable[int], part_b: Iterable[int] | None = None, num_atoms: int | None = None):
        a = frozenset(int(x) for x in part_a)
        if part_b is None:
            if num_atoms is None:
                raise ValueError("give part_b or num_atoms")
            b = frozenset(range(1, num_atoms + 1)) - a
        else:
            b = frozenset(int(x) for x in part_b)
        if a & b:
            raise ValueError("parts overlap")
        if not a or not b:
            raise ValueError("both parts of a bipartition must be nonempty")
        everything = a | b
        if everything != frozenset(range(1, len(everything) + 1)):
            raise ValueError("parts must cover atoms 1..N exactly")
        object.__setattr__(self, "part_a", a)
        object.__setattr__(self, "part_b", b)

    @property
    def num_atoms(self) -> int:
        return len(self.part_a) + len(self.part_b)

    @property
    def masks(self) -> tuple[int, int]:
        return atoms_to_mask(sorted(self.part_a)), atoms_to_mask(sorted(self.part_b))


def is_separable(f: NilpotentPolynomial, cut: Bipartition, tol: float = SEPARABILITY_TOL) -> bool:
    """True iff no monomial of the nilpotential couples both sides of ``cut``.

    The threshold is ``tol * max(1, largest |coefficient|)`` so roundoff in
    nilpotentials of states with a tiny vacuum amplitude is not read as
    entanglement; for coefficients of order one it is the bare ``tol``.
    """
    if cut.num_atoms != f.num_atoms:
        raise ValueError("cut does not match the polynomial's atom count")
    ma, mb = cut.masks
    scale = max([1.0] + [abs(c) for c in f._terms.values()])
    for (m, _), c in f._terms.items():
        if abs(c) >= tol * scale and (m & ma) and (m & mb):
            return False
    return True


# -- canonical form ---------------------------------------------------------------------------


@dataclass
class CanonicalForm:
    tanglemeter: NilpotentPolynomial
    locals: list[np.ndarray]
    vacuum_amplitude: complex
    converged: bool
    sweeps: int
    restarts: int = 0


def _apply_locals(vector: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    N = len(mats)
    psi = vector.reshape((2,) * N)
    for n, U in enumerate(mats, start=1):
        ax = N - n
        psi = np.moveaxis(np.tensordot(U, psi, axes=([1], [ax])), 0, ax)
    return psi.reshape(-1)


def _ascent(psi: np.ndarray, phis: list[np.ndarray], max_sweeps: int, tol: float):
    N = psi.ndim
    value = 0.0
    for sweep in range(1, max_sweeps + 1):
        for n in range(1, N + 1):
            v = _environment(psi, phis, n)
            norm = np.linalg.norm(v)
            if norm == 0:
                continue
            phis[n - 1] = v / norm
            value = norm**2
        # stationarity: each environment vector must be parallel to its ket
        residual = 0.0
        for n in range(1, N + 1):
            v = _environment(psi, phis, n)
            phi = phis[n - 1]
            residual = max(residual, np.linalg.norm(v - (phi.conj() @ v) * phi))
        if residual <= tol:
            return phis, value, True, sweep
    return phis, value, False, max_sweeps


def _environment(psi: np.ndarray, phis: list[np.ndarray], n: int) -> np.ndarray:
    N = psi.ndim
    letters = "abcdefghijklmnopqrstuvwxyz"[:N]
    operands = [psi]
    subs = [letters]
    for m in range(1, N + 1):
        if m == n:
            continue
        operands.append(phis[m - 1].conj())
        subs.append(letters[N - m])
    expr = ",".join(subs) + "->" + letters[N - n]
    return np.einsum(expr, *operands)


def canonicalize(
    state: NilpotentPolynomial,
    restarts: int = 8,
    max_sweeps: int = 500,
    tol: float = 1e-13,
    seed: int | None = 0,
) -> CanonicalForm:
    """Local-unitary representative closest to the atomic vacuum, and its nilpotential.

    Alternating maximisation of ``|<phi_1 ... phi_N | psi>|^2`` over single-atom
    kets; each coordinate step is solved exactly (the optimal ket is the
    normalised environment vector).  Restart 0 starts at the vacuum, the rest
    from random product states; ties keep the earliest restart.  Per-atom
    unitaries map ``phi_n`` to ``|0>`` with the gauge ``<0|phi_n>`` real.
    """
    if state.photon_degree:
        raise ValueError("canonicalize expects a purely atomic polynomial")
    N = state.num_atoms
    vec = state.atomic_vector()
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        raise ValueError("state has zero norm")
    psi = (vec / nrm).reshape((2,) * N)
    rng = np.random.default_rng(seed)

    best = None
    all_converged = True
    total_sweeps = 0
    for r in range(max(1, restarts)):
        if r == 0:
            phis = [np.array([1.0, 0.0], complex) for _ in range(N)]
        else:
            phis = []
            for _ in range(N):
                z = rng.normal(size=2) + 1j * rng.normal(size=2)
                phis.append(z / np.linalg.norm(z))
        phis, value, ok, sweeps = _ascent(psi, phis, max_sweeps, tol)
        all_converged &= ok
        total_sweeps += sweeps
        if best is None or value > best[1] * (1 + 1e-12):
            best = (phis, value, ok, sweeps, r)

    phis = best[0]
    mats = []
    for phi in phis:
        a, b = phi
        phase = np.exp(-1j * np.angle(a)) if abs(a) > 1e-15 else np.exp(-1j * np.angle(b))
        a, b = a * phase, b * phase
        mats.append(np.array([[np.conj(a), np.conj(b)], [-b, a]]))
    rotated = _apply_locals(psi.reshape(-1), mats)
    poly = NilpotentPolynomial.from_dense(rotated[None, :], N, photon_cap=0)
    return CanonicalForm(
        tanglemeter=poly_log(poly),
        locals=mats,
        vacuum_amplitude=complex(rotated[0]),
        converged=bool(best[2]),
        sweeps=total_sweeps,
        restarts=best[4],
    )


# -- collective variables ------------------------------------------------------------------------


@dataclass(frozen=True)
class CollectivePolynomial:
    """Polynomial in two collective variables ``S_A = sum_A s_n`` and ``S_B``.

    ``terms[(k, l)]`` multiplies ``S_A**k S_B**l``.
    """

    ensemble_sizes: tuple[int, int]
    terms: dict[tuple[int, int], complex] = field(default_factory=dict)

    def __post_init__(self):
        na, nb = self.ensemble_sizes
        for k, l in self.terms:
            if not (0 <= k <= na and 0 <= l <= nb):
                raise ValueError(f"term ({k}, {l}) exceeds ensemble sizes {self.ensemble_sizes}")

    def beta(self, k: int, l: int) -> complex:
        return self.terms.get((k, l), 0.0j)

    def table(self) -> np.ndarray:
        na, nb = self.ensemble_sizes
        out = np.zeros((na + 1, nb + 1), complex)
        for (k, l), c in self.terms.items():
            out[k, l] = c
        return out


def _split_masks(split, num_atoms: int) -> tuple[int, int, int, int]:
    if isinstance(split, Bipartition):
        a, b = sorted(split.part_a), sorted(split.part_b)
    else:
        a, b = sorted(split[0]), sorted(split[1])
    if set(a) & set(b) or set(a) | set(b) != set(range(1, num_atoms + 1)):
        raise ValueError("split must partition atoms 1..N")
    return atoms_to_mask(a), atoms_to_mask(b), len(a), len(b)


def to_collective(p: NilpotentPolynomial, split, tol: float = SYMMETRY_TOL) -> CollectivePolynomial:
    """Rewrite a part-wise symmetric polynomial in powers of ``S_A`` and ``S_B``.

    Uses ``S_X**k = k! * sum_{|S|=k} prod_{n in S} s_n``.  ``split`` is a
    :class:`Bipartition` or a pair of atom collections (one may be empty).
    """
    if p.photon_degree:
        raise ValueError("collective reduction expects a purely atomic polynomial")
    ma, mb, na, nb = _split_masks(split, p.num_atoms)
    groups: dict[tuple[int, int], list[complex]] = {}
    for (m, _), c in p._terms.items():
        key = (bin(m & ma).count("1"), bin(m & mb).count("1"))
        groups.setdefault(key, []).append(c)
    terms = {}
    for (k, l), coeffs in groups.items():
        expected = math.comb(na, k) * math.comb(nb, l)
        ref = coeffs[0]
        scale = max(1.0, abs(ref))
        if len(coeffs) != expected:
            if max(abs(c) for c in coeffs) > tol * scale:
                raise SymmetryError(f"sector ({k}, {l}) has {len(coeffs)} of {expected} monomials")
            continue
        if max(abs(c - ref) for c in coeffs) > tol * scale:
            raise SymmetryError(f"sector ({k}, {l}) coefficients differ")
        mean = sum(coeffs) / len(coeffs)
        terms[(k, l)] = mean / (math.factorial(k) * math.factorial(l))
    return CollectivePolynomial((na, nb), terms)


def from_collective(cp: CollectivePolynomial, split, num_atoms: int | None = None) -> NilpotentPolynomial:
    """Expand a collective polynomial back into atomic variables."""
    if num_atoms is None:
        num_atoms = sum(cp.ensemble_sizes)
    ma, mb, na, nb = _split_masks(split, num_atoms)
    if (na, nb) != tuple(cp.ensemble_sizes):
        raise ValueError("split sizes do not match the collective polynomial")
    a_atoms = mask_to_atoms(ma)
    b_atoms = mask_to_atoms(mb)
    terms = {}
    for (k, l), beta in cp.terms.items():
        weight = beta * math.factorial(k) * math.factorial(l)
        for sa in combinations(a_atoms, k):
            for sb in combinations(b_atoms, l):
                terms[Monomial(tuple(sorted(sa + sb)), 0)] = weight
    return NilpotentPolynomial(num_atoms, 0, terms)
