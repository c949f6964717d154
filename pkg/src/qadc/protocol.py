"""Shot-by-shot execution of the digital protocol and the classical baseline.

A quantum repetition chains three experiments (4-, 2-, 1-photon) with genuine
feed-forward: the informative bit of each stage selects the dialed inverse
rotations of the next.  The alternative acquisition mode runs every control
configuration independently and reassembles valid 7-bit strings afterwards
(`run_configuration_sweep` + `match_configurations`), mirroring how a
post-selected platform implements feed-forward.

Outcome distributions per (program, source realization class) are exact and
memoized, so sampling large shot counts is cheap; the memo behaves as a pure
cache keyed by the program settings and the realized ensemble.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from qadc.linop import (
    GHZ_INPUT_MODES,
    build_step_program,
    logical_rail_pairs,
    mesh_unitary,
    perturb_program,
)
from qadc.photonics import (
    SourceModel,
    ensemble_from_parts,
    full_output_distribution,
    g2_to_probs,
)

PROBE_SIZES = (4, 2, 1)
N_PROBE_GROUPS = 3
CLASSICAL_QUBITS = 7  # 2**t - 1 with t = 3

QUANTUM_CSV_HEADER = (
    "phase_index,phase_rad,shot_index,m6,m5,m4,m3,m2,m1,m0,b1,b2,b3"
)
CLASSICAL_CSV_HEADER = "phase_index,phase_rad,shot_index,c6,c5,c4,c3,c2,c1,c0"

_STREAM_QUANTUM = 1
_STREAM_CLASSICAL = 2
_STREAM_SWEEP = 3
_STREAM_MATCH = 4
_STREAM_PERTURB = 5

#: Dialed control-flag combinations per experiment in the configuration sweep,
#: as (sigma_z, r2, r3) triples: 2 + 4 + 4 = 10 configurations.
SWEEP_FLAGS = {
    4: ((0, 0, 0), (1, 0, 0)),
    2: ((0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)),
    1: ((0, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1)),
}

_MAX_EXTRAS = 2  # >2 surviving same-bin extra photons: discard (prob < 1e-7)


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent, reproducible random stream for a (seed, key...) address."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    )


def _float_key(x: float) -> tuple[int, int]:
    bits = int(np.float64(x).view(np.uint64))
    return (bits >> 32, bits & 0xFFFFFFFF)


@dataclass(frozen=True)
class NoiseConfig:
    """Noise knobs of the simulated platform.

    ``delta`` is the common pairwise photon indistinguishability, ``g2_*`` the
    second-order correlations of the source for the two- and four-photon
    experiments (the single-photon stages use the two-photon value),
    ``brightness`` the non-empty-bin probability, ``eta`` the per-photon
    end-to-end survival and ``sigma_theta/phi`` static programming errors.
    With ``condition_on_emission`` (default) bins are conditioned on having
    fired, which rescales (p1, p2) by the brightness and keeps acceptance
    rates desk-scale; set it False for the unconditioned source.
    """

    delta: float = 1.0
    g2_two_photon: float = 0.0
    g2_four_photon: float = 0.0
    brightness: float = 0.14
    eta: float = 1.0
    sigma_theta: float = 0.0
    sigma_phi: float = 0.0
    condition_on_emission: bool = True

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta = {self.delta} outside [0, 1]")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta = {self.eta} outside [0, 1]")
        if self.sigma_theta < 0 or self.sigma_phi < 0:
            raise ValueError("programming-error sigmas must be non-negative")

    def source_model(self, n_photons: int) -> SourceModel:
        g2 = self.g2_four_photon if n_photons == 4 else self.g2_two_photon
        p0, p1, p2 = g2_to_probs(g2, self.brightness) if g2 > 0 else (
            1.0 - self.brightness,
            self.brightness,
            0.0,
        )
        return SourceModel(p0, p1, p2, self.eta, g2=g2, brightness=self.brightness)


NOISELESS = NoiseConfig(delta=1.0, brightness=1.0)

#: Defaults measured on the experimental platform (mean pairwise
#: indistinguishability of the six photon pairs, source correlations and
#: brightness of the quantum-dot source).
DEVICE_NOISE = NoiseConfig(
    delta=0.926,
    g2_two_photon=5.321e-3,
    g2_four_photon=5.629e-3,
    brightness=0.14,
    eta=1.0,
)


@dataclass(frozen=True)
class ProtocolConfig:
    """Grid, repetition and noise settings of one acquisition run."""

    n_phases: int = 99
    n_shots: int = 5377
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    max_attempt_factor: int = 400
    sweep_rep_factor: int = 80

    def __post_init__(self):
        if self.n_phases < 1:
            raise ValueError("need at least one phase")
        if self.n_shots < 1:
            raise ValueError("need at least one shot")
        if self.max_attempt_factor < 1 or self.sweep_rep_factor < 1:
            raise ValueError("attempt factors must be positive")

    def phases(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.n_phases) / self.n_phases


@dataclass(frozen=True)
class StepOutcome:
    """Measured bits of one experiment run under dialed control flags."""

    experiment: int
    flags: tuple[int, int, int]  # (sigma_z, r2, r3)
    bits: tuple[int, ...]

    def __post_init__(self):
        if self.experiment not in PROBE_SIZES:
            raise ValueError(f"experiment tag {self.experiment} not in {PROBE_SIZES}")
        if len(self.bits) != self.experiment:
            raise ValueError("bit count must equal the experiment size")


@dataclass(frozen=True)
class ShotRecord:
    """One valid protocol repetition: the 7-bit string m and its (b1, b2, b3)."""

    m: tuple[int, ...]
    b: tuple[int, int, int]

    def __post_init__(self):
        if len(self.m) != 7:
            raise ValueError("m must hold 7 bits")
        if self.b != (self.m[6], self.m[5], self.m[3]):
            raise ValueError("b must equal (m0, m1, m3)")

    @classmethod
    def from_m(cls, m: tuple[int, ...]) -> "ShotRecord":
        m = tuple(int(x) for x in m)
        return cls(m, (m[6], m[5], m[3]))


@dataclass(frozen=True)
class StepDistribution:
    """Exact accepted-outcome distribution of one experiment configuration."""

    outcomes: np.ndarray  # [K, n_qubits] uint8 logical bits
    cum_probs: np.ndarray  # [K] cumulative accepted probability
    discard_prob: float


class StepSimulator:
    """Builds programs, derives exact outcome distributions and samples them.

    Programming errors are static per run: each (experiment, phase, flags)
    program receives one frozen perturbation drawn from a stream derived from
    the run seed, modelling miscalibration rather than per-shot jitter.
    """

    def __init__(self, noise: NoiseConfig, seed: int):
        self.noise = noise
        self.seed = seed
        self._programs: dict = {}
        self._dists: dict = {}
        self._sources = {n: noise.source_model(n) for n in PROBE_SIZES}

    # -- programs -----------------------------------------------------------

    def unitary(self, n: int, phi: float, flags: tuple[int, int, int]) -> np.ndarray:
        key = (n, _float_key(phi), flags)
        if key not in self._programs:
            program = build_step_program(
                "full",
                n,
                phi,
                sigma_z=bool(flags[0]),
                r2=bool(flags[1]),
                r3=bool(flags[2]),
            )
            if self.noise.sigma_theta > 0 or self.noise.sigma_phi > 0:
                flag_code = flags[0] * 4 + flags[1] * 2 + flags[2]
                rng = derive_rng(
                    self.seed, _STREAM_PERTURB, n, flag_code, *_float_key(phi)
                )
                program = perturb_program(
                    program, self.noise.sigma_theta, self.noise.sigma_phi, rng
                )
            self._programs[key] = mesh_unitary(program)
        return self._programs[key]

    # -- source realization classes ------------------------------------------

    def sample_class_keys(self, n: int, count: int, rng: np.random.Generator) -> np.ndarray:
        """Realization class per attempt, encoded as main|extra survival masks.

        Bit k: main photon of bin k survived; bit n+k: a second photon was
        emitted in bin k and survived.  Conditioned mode redraws empty bins.
        """
        src = self._sources[n]
        if self.noise.condition_on_emission:
            p_all = src.emission_probability
            if p_all <= 0:
                raise ValueError("conditioned source needs non-zero brightness")
            p2c = src.p2 / p_all
            doubled = rng.random((count, n)) < p2c
            main_emitted = np.ones((count, n), dtype=bool)
        else:
            u = rng.random((count, n))
            main_emitted = u >= src.p0
            doubled = u >= src.p0 + src.p1
        main_alive = main_emitted & (rng.random((count, n)) < src.eta)
        extra_alive = doubled & (rng.random((count, n)) < src.eta)
        weights = 1 << np.arange(n)
        return (main_alive @ weights).astype(np.int64) | (
            (extra_alive @ weights).astype(np.int64) << n
        )

    def class_parts(self, n: int, key: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        channels = GHZ_INPUT_MODES[n]
        mains = tuple(channels[k] for k in range(n) if key & (1 << k))
        extras = tuple(channels[k] for k in range(n) if key & (1 << (n + k)))
        return mains, extras

    # -- distributions --------------------------------------------------------

    def distribution(
        self, n: int, phi: float, flags: tuple[int, int, int], class_key: int
    ) -> StepDistribution:
        key = (n, _float_key(phi), flags, class_key)
        if key in self._dists:
            return self._dists[key]
        mains, extras = self.class_parts(n, class_key)
        dist = self._compute_distribution(n, phi, flags, mains, extras)
        self._dists[key] = dist
        return dist

    def _compute_distribution(
        self,
        n: int,
        phi: float,
        flags: tuple[int, int, int],
        mains: tuple[int, ...],
        extras: tuple[int, ...],
    ) -> StepDistribution:
        pairs = logical_rail_pairs(n)
        empty = StepDistribution(
            np.zeros((0, n), dtype=np.uint8), np.zeros(0), 1.0
        )
        if len(mains) + len(extras) < n or len(extras) > _MAX_EXTRAS:
            return empty
        u = self.unitary(n, phi, flags)
        ensemble = ensemble_from_parts(mains, extras, self.noise.delta)
        full = full_output_distribution(u, ensemble)
        rails = {m for pair in pairs for m in pair}
        outside = [m for m in range(u.shape[0]) if m not in rails]
        acc: dict[tuple[int, ...], float] = {}
        discard = 0.0
        for counts, p in full.items():
            if p == 0.0:
                continue
            if any(counts[m] for m in outside):
                discard += p
                continue
            bits = []
            ok = True
            for rail0, rail1 in pairs:
                c0 = counts[rail0] > 0
                c1 = counts[rail1] > 0
                if c0 == c1:
                    ok = False
                    break
                bits.append(1 if c1 else 0)
            if ok:
                key = tuple(bits)
                acc[key] = acc.get(key, 0.0) + p
            else:
                discard += p
        if not acc:
            return empty
        outcomes = np.array(sorted(acc), dtype=np.uint8)
        probs = np.array([acc[tuple(row)] for row in outcomes])
        return StepDistribution(outcomes, np.cumsum(probs), float(discard))

    # -- sampling --------------------------------------------------------------

    def sample_step(
        self,
        n: int,
        phi: float,
        flags: tuple[int, int, int],
        count: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Draw ``count`` outcomes; rows of -1 mark post-selection discards."""
        out = np.full((count, n), -1, dtype=np.int8)
        if count == 0:
            return out
        keys = self.sample_class_keys(n, count, rng)
        draws = rng.random(count)
        for key in np.unique(keys):
            sel = keys == key
            dist = self.distribution(n, phi, flags, int(key))
            if dist.outcomes.shape[0] == 0:
                continue
            idx = np.searchsorted(dist.cum_probs, draws[sel], side="right")
            hit = idx < dist.outcomes.shape[0]
            rows = np.where(sel)[0][hit]
            out[rows] = dist.outcomes[idx[hit]]
        return out


# ---------------------------------------------------------------------------
# Feed-forward acquisition
# ---------------------------------------------------------------------------


@dataclass
class QuantumDataset:
    n_phases: int
    phases: np.ndarray
    phase_index: np.ndarray  # [n_records]
    shot_index: np.ndarray  # attempt index; gaps are discarded repetitions
    m: np.ndarray  # [n_records, 7] bits m6..m0
    stats: dict = field(default_factory=dict)

    @property
    def b(self) -> np.ndarray:
        """(b1, b2, b3) columns derived from the frozen m positions."""
        return self.m[:, [6, 5, 3]]


@dataclass
class ClassicalDataset:
    n_phases: int
    phases: np.ndarray
    phase_index: np.ndarray
    shot_index: np.ndarray
    c: np.ndarray  # [n_records, 7] bits c6..c0
    stats: dict = field(default_factory=dict)


def _quantum_chunk(
    sim: StepSimulator, phi: float, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, dict]:
    """Simulate ``count`` feed-forward attempts; invalid rows are all -1."""
    m = np.full((count, 7), -1, dtype=np.int8)
    stats = {"discard_4": 0, "discard_2": 0, "discard_1": 0}
    bits4 = sim.sample_step(4, phi, (0, 0, 0), count, rng)
    ok4 = bits4[:, 0] >= 0
    stats["discard_4"] = int(count - ok4.sum())
    b3 = np.zeros(count, dtype=np.int8)
    b3[ok4] = bits4[ok4].sum(axis=1) % 2  # parity correction folds sigma_z

    bits2 = np.full((count, 2), -1, dtype=np.int8)
    for v in (0, 1):
        sel = ok4 & (b3 == v)
        if sel.any():
            bits2[sel] = sim.sample_step(2, phi, (0, v, 0), int(sel.sum()), rng)
    ok2 = ok4 & (bits2[:, 0] >= 0)
    stats["discard_2"] = int(ok4.sum() - ok2.sum())
    b2 = np.zeros(count, dtype=np.int8)
    b2[ok2] = bits2[ok2, 0] ^ bits2[ok2, 1]  # sigma_z as a flip by the control bit

    bits1 = np.full((count, 1), -1, dtype=np.int8)
    for r2v in (0, 1):
        for r3v in (0, 1):
            sel = ok2 & (b2 == r2v) & (b3 == r3v)
            if sel.any():
                bits1[sel] = sim.sample_step(1, phi, (0, r2v, r3v), int(sel.sum()), rng)
    ok1 = ok2 & (bits1[:, 0] >= 0)
    stats["discard_1"] = int(ok2.sum() - ok1.sum())

    m[ok1, 0:3] = bits4[ok1, 0:3]
    m[ok1, 3] = b3[ok1]
    m[ok1, 4] = bits2[ok1, 0]
    m[ok1, 5] = b2[ok1]
    m[ok1, 6] = bits1[ok1, 0]
    return m, stats


def simulate_quantum_dataset(config: ProtocolConfig) -> QuantumDataset:
    """Run the feed-forward protocol until n_shots valid repetitions per phase."""
    sim = StepSimulator(config.noise, config.seed)
    phases = config.phases()
    rec_phase, rec_shot, rec_m = [], [], []
    stats = {"attempts": 0, "valid": 0, "discard_4": 0, "discard_2": 0, "discard_1": 0}
    short_phases = []
    cap = config.n_shots * config.max_attempt_factor
    for p_idx, phi in enumerate(phases):
        rng = derive_rng(config.seed, _STREAM_QUANTUM, p_idx)
        have = 0
        attempts = 0
        while have < config.n_shots and attempts < cap:
            chunk = min(4096, cap - attempts)
            m, chunk_stats = _quantum_chunk(sim, float(phi), chunk, rng)
            valid = np.where(m[:, 0] >= 0)[0]
            keep = valid[: config.n_shots - have]
            rec_phase.extend([p_idx] * len(keep))
            rec_shot.extend((attempts + keep).tolist())
            rec_m.extend(m[keep].tolist())
            have += len(keep)
            attempts += chunk
            for k, v in chunk_stats.items():
                stats[k] += v
        stats["attempts"] += attempts
        stats["valid"] += have
        if have < config.n_shots:
            short_phases.append(p_idx)
    if short_phases:
        warnings.warn(
            f"attempt cap reached before n_shots at {len(short_phases)} phases"
        )
        stats["short_phases"] = short_phases
    return QuantumDataset(
        config.n_phases,
        phases,
        np.asarray(rec_phase, dtype=np.int64),
        np.asarray(rec_shot, dtype=np.int64),
        np.asarray(rec_m, dtype=np.int8).reshape(-1, 7),
        stats,
    )


def run_quantum_shot(
    phi: float, config: ProtocolConfig, rng: np.random.Generator
) -> ShotRecord | None:
    """One feed-forward repetition; None reports a discarded shot."""
    sim = _shot_simulator(config)
    m, _ = _quantum_chunk(sim, float(phi), 1, rng)
    if m[0, 0] < 0:
        return None
    return ShotRecord.from_m(tuple(int(x) for x in m[0]))


_SHOT_SIMULATORS: dict = {}


def _shot_simulator(config: ProtocolConfig) -> StepSimulator:
    # Single-shot helpers share one simulator per config so repeated calls
    # reuse cached distributions; the cache is pure.
    key = (config.noise, config.seed)
    if key not in _SHOT_SIMULATORS:
        if len(_SHOT_SIMULATORS) >= 32:
            _SHOT_SIMULATORS.clear()
        _SHOT_SIMULATORS[key] = StepSimulator(config.noise, config.seed)
    return _SHOT_SIMULATORS[key]


# ---------------------------------------------------------------------------
# Configuration sweep and post-processing
# ---------------------------------------------------------------------------


def run_configuration_sweep(
    phi: float, config: ProtocolConfig, rng: np.random.Generator
) -> list[StepOutcome]:
    """One repetition of every control configuration, no feed-forward."""
    sim = _shot_simulator(config)
    outcomes = []
    for n in PROBE_SIZES:
        for flags in SWEEP_FLAGS[n]:
            bits = sim.sample_step(n, float(phi), flags, 1, rng)[0]
            if bits[0] >= 0:
                outcomes.append(StepOutcome(n, flags, tuple(int(x) for x in bits)))
    return outcomes


def _match_arrays(
    four_bits: np.ndarray,
    four_flags: np.ndarray,
    two_bits: np.ndarray,
    two_flags: np.ndarray,
    one_bits: np.ndarray,
    one_flags: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Array core of the matching pipeline; returns the valid m rows."""
    # Step 1: drop outcomes whose dialed correction contradicts the parity of
    # the measured control bits.
    if len(four_bits):
        keep4 = four_flags[:, 0] == (four_bits[:, 0:3].sum(axis=1) % 2)
        four_bits, four_flags = four_bits[keep4], four_flags[keep4]
    if len(two_bits):
        keep2 = two_flags[:, 0] == two_bits[:, 0]
        two_bits, two_flags = two_bits[keep2], two_flags[keep2]
    # Step 2: pool survivors per experiment in randomized order, keeping flags.
    perm4 = rng.permutation(len(four_bits))
    perm2 = rng.permutation(len(two_bits))
    perm1 = rng.permutation(len(one_bits))
    four_bits, four_flags = four_bits[perm4], four_flags[perm4]
    two_bits, two_flags = two_bits[perm2], two_flags[perm2]
    one_bits, one_flags = one_bits[perm1], one_flags[perm1]
    # Step 3: zip homologous entries; keep triples whose dialed rotations agree
    # with the informative bits produced by the other experiments.
    n = min(len(four_bits), len(two_bits), len(one_bits))
    if n == 0:
        return np.zeros((0, 7), dtype=np.int8)
    four_bits, two_bits, one_bits = four_bits[:n], two_bits[:n], one_bits[:n]
    two_flags, one_flags = two_flags[:n], one_flags[:n]
    b3 = four_bits[:, 3]
    b2 = two_bits[:, 1]
    agree = (
        (two_flags[:, 1] == b3) & (one_flags[:, 1] == b2) & (one_flags[:, 2] == b3)
    )
    m = np.concatenate(
        [four_bits[agree], two_bits[agree], one_bits[agree]], axis=1
    ).astype(np.int8)
    return m


def match_configurations(
    outcomes: list[StepOutcome], rng: np.random.Generator
) -> list[ShotRecord]:
    """Assemble valid 7-bit strings from configuration-sweep outcomes.

    Implements the three-step pipeline: parity filtering per dialed
    configuration, randomized pooling per experiment and agreement-checked
    zipping of homologous entries.  Empty pools simply yield no records.
    """
    groups: dict[int, tuple[list, list]] = {n: ([], []) for n in PROBE_SIZES}
    for o in outcomes:
        groups[o.experiment][0].append(o.bits)
        groups[o.experiment][1].append(o.flags)

    def arrays(n):
        bits, flags = groups[n]
        if not bits:
            return (np.zeros((0, n), dtype=np.int8), np.zeros((0, 3), dtype=np.int8))
        return (np.asarray(bits, dtype=np.int8), np.asarray(flags, dtype=np.int8))

    m = _match_arrays(*arrays(4), *arrays(2), *arrays(1), rng=rng)
    return [ShotRecord.from_m(tuple(int(x) for x in row)) for row in m]


def simulate_sweep_dataset(config: ProtocolConfig) -> QuantumDataset:
    """Dataset via the configuration sweep plus matching post-processing."""
    sim = StepSimulator(config.noise, config.seed)
    phases = config.phases()
    rec_phase, rec_shot, rec_m = [], [], []
    stats = {"repetitions": 0, "matched": 0}
    reps = config.n_shots * config.sweep_rep_factor
    short_phases = []
    for p_idx, phi in enumerate(phases):
        rng = derive_rng(config.seed, _STREAM_SWEEP, p_idx)
        pools = {}
        for n in PROBE_SIZES:
            bit_list, flag_list = [], []
            for flags in SWEEP_FLAGS[n]:
                bits = sim.sample_step(n, float(phi), flags, reps, rng)
                ok = bits[:, 0] >= 0
                bit_list.append(bits[ok])
                flag_list.append(np.tile(np.asarray(flags, dtype=np.int8), (int(ok.sum()), 1)))
            pools[n] = (
                np.concatenate(bit_list, axis=0),
                np.concatenate(flag_list, axis=0),
            )
        match_rng = derive_rng(config.seed, _STREAM_MATCH, p_idx)
        m = _match_arrays(
            *pools[4], *pools[2], *pools[1], rng=match_rng
        )[: config.n_shots]
        if len(m) < config.n_shots:
            short_phases.append(p_idx)
        rec_phase.extend([p_idx] * len(m))
        rec_shot.extend(range(len(m)))
        rec_m.extend(m.tolist())
        stats["repetitions"] += reps
        stats["matched"] += len(m)
    if short_phases:
        warnings.warn(
            f"sweep produced fewer than n_shots matched records at "
            f"{len(short_phases)} phases"
        )
        stats["short_phases"] = short_phases
    return QuantumDataset(
        config.n_phases,
        phases,
        np.asarray(rec_phase, dtype=np.int64),
        np.asarray(rec_shot, dtype=np.int64),
        np.asarray(rec_m, dtype=np.int8).reshape(-1, 7),
        stats,
    )


# ---------------------------------------------------------------------------
# Classical baseline
# ---------------------------------------------------------------------------


def _classical_chunk(
    sim: StepSimulator, phi: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    bits = sim.sample_step(1, phi, (0, 0, 0), count * CLASSICAL_QUBITS, rng)
    bits = bits.reshape(count, CLASSICAL_QUBITS)
    bad = (bits < 0).any(axis=1)
    bits[bad] = -1  # a lost photon discards the whole 7-bit repetition
    return bits


def run_classical_shot(
    phi: float, config: ProtocolConfig, rng: np.random.Generator
) -> tuple[int, ...] | None:
    """One classical repetition: 7 independent single-photon passes."""
    sim = _shot_simulator(config)
    bits = _classical_chunk(sim, float(phi), 1, rng)[0]
    if bits[0] < 0:
        return None
    return tuple(int(x) for x in bits)


def simulate_classical_dataset(config: ProtocolConfig) -> ClassicalDataset:
    sim = StepSimulator(config.noise, config.seed)
    phases = config.phases()
    rec_phase, rec_shot, rec_c = [], [], []
    stats = {"attempts": 0, "valid": 0}
    cap = config.n_shots * config.max_attempt_factor
    for p_idx, phi in enumerate(phases):
        rng = derive_rng(config.seed, _STREAM_CLASSICAL, p_idx)
        have = 0
        attempts = 0
        while have < config.n_shots and attempts < cap:
            chunk = min(4096, cap - attempts)
            bits = _classical_chunk(sim, float(phi), chunk, rng)
            valid = np.where(bits[:, 0] >= 0)[0]
            keep = valid[: config.n_shots - have]
            rec_phase.extend([p_idx] * len(keep))
            rec_shot.extend((attempts + keep).tolist())
            rec_c.extend(bits[keep].tolist())
            have += len(keep)
            attempts += chunk
        stats["attempts"] += attempts
        stats["valid"] += have
    return ClassicalDataset(
        config.n_phases,
        phases,
        np.asarray(rec_phase, dtype=np.int64),
        np.asarray(rec_shot, dtype=np.int64),
        np.asarray(rec_c, dtype=np.int8).reshape(-1, 7),
        stats,
    )


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def write_quantum_csv(ds: QuantumDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(QUANTUM_CSV_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        b = ds.b
        for i in range(len(ds.phase_index)):
            p = int(ds.phase_index[i])
            writer.writerow(
                [p, _fmt(float(ds.phases[p])), int(ds.shot_index[i])]
                + [int(x) for x in ds.m[i]]
                + [int(x) for x in b[i]]
            )


def write_classical_csv(ds: ClassicalDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CLASSICAL_CSV_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for i in range(len(ds.phase_index)):
            p = int(ds.phase_index[i])
            writer.writerow(
                [p, _fmt(float(ds.phases[p])), int(ds.shot_index[i])]
                + [int(x) for x in ds.c[i]]
            )


def _read_rows(path, header: str, n_cols: int) -> list[list[str]]:
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != header:
            raise ValueError(f"{path}: unexpected header {first!r}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != n_cols:
                raise ValueError(f"{path}: row {lineno}: expected {n_cols} columns")
            rows.append(parts)
    return rows


def _parse_dataset(path, header, bit_cols):
    rows = _read_rows(path, header, 3 + bit_cols)
    phase_index = np.zeros(len(rows), dtype=np.int64)
    shot_index = np.zeros(len(rows), dtype=np.int64)
    bits = np.zeros((len(rows), bit_cols), dtype=np.int8)
    phases_seen: dict[int, float] = {}
    for i, parts in enumerate(rows):
        try:
            phase_index[i] = int(parts[0])
            phases_seen[int(parts[0])] = float(parts[1])
            shot_index[i] = int(parts[2])
            bits[i] = [int(x) for x in parts[3:]]
        except ValueError as exc:
            raise ValueError(f"{path}: row {i + 2}: {exc}") from None
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError(f"{path}: bit columns must be 0/1")
    n_phases = (max(phases_seen) + 1) if phases_seen else 0
    phases = 2.0 * math.pi * np.arange(n_phases) / max(1, n_phases)
    for idx, val in phases_seen.items():
        phases[idx] = val
    return n_phases, phases, phase_index, shot_index, bits


def read_quantum_csv(path) -> QuantumDataset:
    n_phases, phases, phase_index, shot_index, bits = _parse_dataset(
        path, QUANTUM_CSV_HEADER, 10
    )
    m = bits[:, :7]
    b = bits[:, 7:]
    if np.any(b != m[:, [6, 5, 3]]):
        raise ValueError(f"{path}: b columns disagree with the frozen m positions")
    return QuantumDataset(n_phases, phases, phase_index, shot_index, m)


def read_classical_csv(path) -> ClassicalDataset:
    n_phases, phases, phase_index, shot_index, bits = _parse_dataset(
        path, CLASSICAL_CSV_HEADER, 7
    )
    return ClassicalDataset(n_phases, phases, phase_index, shot_index, bits)
