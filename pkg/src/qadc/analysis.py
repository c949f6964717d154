"""Raw-data estimators, conditional-probability tables and mutual information.

Tables hold per-phase outcome counts; probabilities are plug-in frequencies
N_m / n_shots and the phase average realizes the uniform prior over the
sampled grid.  Bootstrap errors resample per-cell counts from Poisson laws.
Independent quadrature oracles evaluate the analytic noiseless likelihood
chains on dense grids; they share no code with the sampling pipeline and
anchor the acceptance suite.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from qadc.protocol import ClassicalDataset, QuantumDataset

TWO_PI = 2.0 * math.pi

#: Qubit resources consumed per repetition (2**t - 1 with t = 3 probe groups).
RESOURCES_PER_SHOT = 7

M_OUTCOMES = 128
B_OUTCOMES = 8


@dataclass(frozen=True)
class CondProbTable:
    """Counts of outcome strings per phase-grid point.

    ``counts[i, k]`` is the number of occurrences of outcome ``k`` at phase
    ``phases[i]``; float entries are allowed so corrupted or denoised
    probability rows (with unit row sums) can flow through the same analysis.
    ``kind`` records the outcome encoding: "m7" for 7-bit strings indexed
    m6..m0 big-endian, "b3" for (b1, b2, b3) indexed 4*b1 + 2*b2 + b3 (so
    column j corresponds to the estimate 2*pi*j/8) and "c7" for classical
    strings indexed c6..c0.
    """

    phases: np.ndarray
    counts: np.ndarray
    kind: str = "m7"

    def __post_init__(self):
        phases = np.array(self.phases, dtype=float)
        counts = np.array(self.counts, dtype=float)
        phases.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 2 or counts.shape[0] != phases.shape[0]:
            raise ValueError("counts must be [n_phases, n_outcomes]")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def n_shots_effective(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def probabilities(self) -> np.ndarray:
        """Row-normalized plug-in probabilities; zero rows stay zero."""
        totals = self.n_shots_effective
        safe = np.where(totals > 0, totals, 1.0)
        return self.counts / safe[:, None]


@dataclass(frozen=True)
class MIEstimate:
    value: float
    stderr: float = 0.0
    n_resamples: int = 0

    def __post_init__(self):
        if self.value < -1e-9:
            raise ValueError(f"mutual information {self.value} below clip")
        object.__setattr__(self, "value", max(0.0, self.value))
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")


def m_codes(m_bits: np.ndarray) -> np.ndarray:
    """7-bit rows (m6..m0) to table column indices."""
    weights = np.array([64, 32, 16, 8, 4, 2, 1], dtype=np.int64)
    return np.asarray(m_bits, dtype=np.int64) @ weights


def b_code(b1: int, b2: int, b3: int) -> int:
    return 4 * b1 + 2 * b2 + b3


_B_FROM_M = np.array(
    [b_code((c >> 0) & 1, (c >> 1) & 1, (c >> 3) & 1) for c in range(M_OUTCOMES)],
    dtype=np.int64,
)


def table_from_quantum(ds: QuantumDataset) -> CondProbTable:
    counts = np.zeros((ds.n_phases, M_OUTCOMES))
    np.add.at(counts, (ds.phase_index, m_codes(ds.m)), 1.0)
    return CondProbTable(ds.phases, counts, kind="m7")


def table_from_classical(ds: ClassicalDataset) -> CondProbTable:
    counts = np.zeros((ds.n_phases, M_OUTCOMES))
    np.add.at(counts, (ds.phase_index, m_codes(ds.c)), 1.0)
    return CondProbTable(ds.phases, counts, kind="c7")


def marginalize_to_bits(table: CondProbTable) -> CondProbTable:
    """Sum counts over the four non-informative bits of a 7-bit table."""
    if table.kind != "m7":
        raise ValueError(f"can only marginalize 7-bit quantum tables, got {table.kind}")
    counts = np.zeros((table.counts.shape[0], B_OUTCOMES))
    np.add.at(counts.T, _B_FROM_M, table.counts.T)
    return CondProbTable(table.phases, counts, kind="b3")


# ---------------------------------------------------------------------------
# Phase estimators
# ---------------------------------------------------------------------------


def estimate_phase_quantum(b: tuple[int, int, int]) -> float:
    """Digital estimate 2*pi*(b1/2 + b2/4 + b3/8) from the informative bits."""
    b1, b2, b3 = (int(x) for x in b)
    if any(x not in (0, 1) for x in (b1, b2, b3)):
        raise ValueError("bits must be 0/1")
    return TWO_PI * (b1 / 2 + b2 / 4 + b3 / 8)


def estimate_phase_classical(m: tuple[int, ...]) -> float:
    """Interferometric estimate 2*arccos(sqrt(N0/7)) from a 7-bit string."""
    bits = tuple(int(x) for x in m)
    if len(bits) != 7 or any(x not in (0, 1) for x in bits):
        raise ValueError("need 7 bits of 0/1")
    n0 = bits.count(0)
    return 2.0 * math.acos(math.sqrt(n0 / 7.0))


def circular_mean(angles: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Mean direction of angles in radians, wrapped to [0, 2*pi)."""
    a = np.asarray(angles, dtype=float)
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float)
    s = float(np.sum(w * np.sin(a)))
    c = float(np.sum(w * np.cos(a)))
    return float(np.arctan2(s, c) % TWO_PI)


def wrap_difference(a: float, b: float) -> float:
    """Signed circular difference a - b in (-pi, pi]."""
    d = (a - b) % TWO_PI
    return d - TWO_PI if d > math.pi else d


# ---------------------------------------------------------------------------
# Mutual information
# ---------------------------------------------------------------------------


def _mi_from_probabilities(p_cond: np.ndarray) -> float:
    """Plug-in mutual information in bits from per-phase outcome distributions."""
    p_m = p_cond.mean(axis=0)
    mask = p_cond > 0
    ratios = np.divide(
        p_cond, p_m[None, :], out=np.ones_like(p_cond), where=mask
    )
    terms = np.where(mask, p_cond * np.log2(ratios), 0.0)
    return float(terms.sum(axis=1).mean())


def mutual_information(table: CondProbTable) -> MIEstimate:
    """I(m : phi) with a uniform prior quadrature over the sampled phases.

    Zero-count outcomes contribute 0 (plug-in convention, no pseudo-counts);
    phases with no valid shots are excluded with a warning.
    """
    totals = table.n_shots_effective
    keep = totals > 0
    if not np.any(keep):
        raise ValueError("table has no valid shots at any phase")
    if not np.all(keep):
        warnings.warn(f"{int((~keep).sum())} phases with zero valid shots excluded")
    p_cond = table.probabilities()[keep]
    return MIEstimate(_mi_from_probabilities(p_cond))


def bootstrap_mi(
    table: CondProbTable, n_resamples: int, rng: np.random.Generator
) -> MIEstimate:
    """Bootstrap the MI by Poisson-resampling every count cell.

    The counting statistics of each cell are Poissonian, so replicates draw
    counts with the observed means and recompute the plug-in estimate; the
    reported error is the sample standard deviation over replicates.
    """
    if n_resamples < 2:
        raise ValueError("need at least two bootstrap resamples")
    point = mutual_information(table)
    keep = table.n_shots_effective > 0
    counts = table.counts[keep]
    values = np.empty(n_resamples)
    for r in range(n_resamples):
        resampled = rng.poisson(counts).astype(float)
        totals = resampled.sum(axis=1)
        ok = totals > 0
        p_cond = resampled[ok] / totals[ok, None]
        values[r] = _mi_from_probabilities(p_cond)
    return MIEstimate(point.value, float(np.std(values, ddof=1)), n_resamples)


def reference_bounds(n_resources: int) -> tuple[float, float]:
    """Digital information bounds (classical, quantum) = (log2(N)/2, log2(N))."""
    if n_resources < 1:
        raise ValueError("resource count must be positive")
    return (0.5 * math.log2(n_resources), math.log2(n_resources))


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------

#: Bin centers of the 8 digital estimates 2*pi*j/8.
HISTOGRAM_BIN_CENTERS = TWO_PI * np.arange(8) / 8.0


def quantum_phase_histograms(table: CondProbTable) -> np.ndarray:
    """Per-phase frequencies of the 8 digital estimates, rows normalized.

    Accepts a 7-bit table (marginalized internally) or a b-table; column j is
    the bin centered at 2*pi*j/8, which coincides with the digital estimate of
    the b-index j.
    """
    if table.kind == "m7":
        table = marginalize_to_bits(table)
    if table.kind != "b3":
        raise ValueError("need a quantum table")
    return table.probabilities()


def classical_phase_histograms(ds: ClassicalDataset) -> np.ndarray:
    """Per-phase frequencies of classical estimates in the same 8-bin layout.

    Each estimate (in [0, pi]) is assigned to the nearest of the 8 digital bin
    centers.
    """
    n0 = 7 - ds.c.sum(axis=1)
    estimates = 2.0 * np.arccos(np.sqrt(n0 / 7.0))
    diffs = np.abs(estimates[:, None] - HISTOGRAM_BIN_CENTERS[None, :])
    diffs = np.minimum(diffs, TWO_PI - diffs)
    bins = np.argmin(diffs, axis=1)
    counts = np.zeros((ds.n_phases, 8))
    np.add.at(counts, (ds.phase_index, bins), 1.0)
    totals = counts.sum(axis=1)
    safe = np.where(totals > 0, totals, 1.0)
    return counts / safe[:, None]


# ---------------------------------------------------------------------------
# Analytic likelihoods and quadrature oracles
# ---------------------------------------------------------------------------


def bit_chain_probabilities(phi, delta: float = 1.0) -> np.ndarray:
    """Noise-model likelihoods p(b | phi) of the 8 informative-bit outcomes.

    The chain multiplies the three conditional laws; partial distinguishability
    scales the fringe visibilities to delta**2 (4-photon), delta (2-photon)
    and 1 (single photon).  Output axis is the b-index 4*b1 + 2*b2 + b3; a
    vector ``phi`` yields a [len(phi), 8] array.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    v3, v2 = delta**2, delta
    out = np.empty((phi.shape[0], 8))
    for code in range(8):
        b1, b2, b3 = (code >> 2) & 1, (code >> 1) & 1, code & 1
        p3 = 0.5 * (1.0 + (1 - 2 * b3) * v3 * np.cos(4 * phi))
        p2 = 0.5 * (1.0 + (1 - 2 * b2) * v2 * np.cos(2 * phi - math.pi * b3 / 2))
        p1 = 0.5 * (
            1.0 + (1 - 2 * b1) * np.cos(phi - math.pi * b2 / 2 - math.pi * b3 / 4)
        )
        out[:, code] = p3 * p2 * p1
    return out


def classical_string_probabilities(phi) -> np.ndarray:
    """Likelihoods of the 128 classical outcome strings, p(1) = sin^2(phi/2)."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    p1 = np.sin(phi / 2.0) ** 2
    ones = np.array([bin(c).count("1") for c in range(M_OUTCOMES)])
    return p1[:, None] ** ones[None, :] * (1 - p1)[:, None] ** (7 - ones)[None, :]


def quadrature_mi_quantum(delta: float = 1.0, n_nodes: int = 20000) -> float:
    """Noiseless-model asymptotic MI of the digital protocol (bits).

    Independent oracle: uniform quadrature of the analytic likelihood chain
    over [0, 2*pi) with at least 1e4 nodes.
    """
    if n_nodes < 10000:
        raise ValueError("quadrature oracle requires at least 1e4 nodes")
    phi = TWO_PI * np.arange(n_nodes) / n_nodes
    return _mi_from_probabilities(bit_chain_probabilities(phi, delta))


def quadrature_mi_classical(n_nodes: int = 20000) -> float:
    """Asymptotic MI of the 7-qubit classical strategy (bits)."""
    if n_nodes < 10000:
        raise ValueError("quadrature oracle requires at least 1e4 nodes")
    phi = TWO_PI * np.arange(n_nodes) / n_nodes
    return _mi_from_probabilities(classical_string_probabilities(phi))


def mean_quantum_estimates(table: CondProbTable) -> tuple[np.ndarray, np.ndarray]:
    """(circular mean, arithmetic mean) of the digital estimate per phase."""
    hist = quantum_phase_histograms(table)
    circ = np.array(
        [circular_mean(HISTOGRAM_BIN_CENTERS, row) for row in hist]
    )
    arith = hist @ HISTOGRAM_BIN_CENTERS
    return circ, arith


def mean_classical_estimates(ds: ClassicalDataset) -> np.ndarray:
    """Arithmetic mean of the classical estimate per phase (image in [0, pi])."""
    n0 = 7 - ds.c.sum(axis=1)
    estimates = 2.0 * np.arccos(np.sqrt(n0 / 7.0))
    sums = np.zeros(ds.n_phases)
    counts = np.zeros(ds.n_phases)
    np.add.at(sums, ds.phase_index, estimates)
    np.add.at(counts, ds.phase_index, 1.0)
    safe = np.where(counts > 0, counts, 1.0)
    return sums / safe
