import math
from collections import Counter

import numpy as np
import pytest

from qadc.protocol import (
    NoiseConfig,
    DEVICE_NOISE,
    ProtocolConfig,
    ShotRecord,
    StepOutcome,
    StepSimulator,
    SWEEP_FLAGS,
    derive_rng,
    match_configurations,
    _match_arrays,
    read_classical_csv,
    read_quantum_csv,
    run_classical_shot,
    run_configuration_sweep,
    run_quantum_shot,
    simulate_classical_dataset,
    simulate_quantum_dataset,
    simulate_sweep_dataset,
    write_classical_csv,
    write_quantum_csv,
)

NOISELESS = NoiseConfig(delta=1.0, brightness=1.0)


def noiseless_config(n_phases=8, n_shots=200, seed=1):
    return ProtocolConfig(n_phases=n_phases, n_shots=n_shots, noise=NOISELESS, seed=seed)


class TestConfig:
    def test_phase_grid(self):
        cfg = noiseless_config(n_phases=4)
        assert np.allclose(cfg.phases(), [0, math.pi / 2, math.pi, 3 * math.pi / 2])

    def test_validation(self):
        with pytest.raises(ValueError):
            ProtocolConfig(n_phases=0)
        with pytest.raises(ValueError):
            NoiseConfig(delta=1.2)

    def test_shot_record_invariant(self):
        with pytest.raises(ValueError):
            ShotRecord((0, 0, 0, 1, 0, 0, 0), (1, 1, 1))
        rec = ShotRecord.from_m((0, 1, 0, 1, 1, 0, 1))
        assert rec.b == (1, 0, 1)

    def test_step_outcome_validation(self):
        with pytest.raises(ValueError):
            StepOutcome(3, (0, 0, 0), (0, 0, 0))
        with pytest.raises(ValueError):
            StepOutcome(4, (0, 0, 0), (0, 0))


class TestGridDeterminism:
    def test_grid_phases_give_binary_expansion(self):
        cfg = noiseless_config(n_phases=8, n_shots=150, seed=3)
        ds = simulate_quantum_dataset(cfg)
        for j in range(8):
            rows = ds.b[ds.phase_index == j]
            assert len(rows) == 150
            expected = ((j >> 2) & 1, (j >> 1) & 1, j & 1)
            assert set(map(tuple, rows.tolist())) == {expected}

    def test_dataset_deterministic(self):
        a = simulate_quantum_dataset(noiseless_config(seed=9, n_shots=50))
        b = simulate_quantum_dataset(noiseless_config(seed=9, n_shots=50))
        assert np.array_equal(a.m, b.m)
        assert np.array_equal(a.shot_index, b.shot_index)

    def test_different_seed_differs(self):
        a = simulate_quantum_dataset(noiseless_config(seed=9, n_shots=50))
        b = simulate_quantum_dataset(noiseless_config(seed=10, n_shots=50))
        assert not np.array_equal(a.shot_index, b.shot_index)


@pytest.fixture(scope="module")
def dataset():
    cfg = ProtocolConfig(n_phases=17, n_shots=4000, noise=NOISELESS, seed=12)
    return simulate_quantum_dataset(cfg)


class TestMarginalLaws:
    def test_b3_law(self, dataset):
        for j in range(dataset.n_phases):
            phi = dataset.phases[j]
            rows = dataset.b[dataset.phase_index == j]
            p_hat = np.mean(rows[:, 2] == 0)
            p = math.cos(2 * phi) ** 2
            sigma = math.sqrt(max(p * (1 - p), 1e-12) / len(rows))
            assert abs(p_hat - p) < max(4 * sigma, 5e-3)

    def test_b2_law_conditional(self, dataset):
        for j in (2, 5, 9, 14):
            phi = dataset.phases[j]
            rows = dataset.b[dataset.phase_index == j]
            for b3 in (0, 1):
                sel = rows[rows[:, 2] == b3]
                if len(sel) < 200:
                    continue
                p_hat = np.mean(sel[:, 1] == 0)
                p = math.cos(phi - math.pi * b3 / 4) ** 2
                sigma = math.sqrt(max(p * (1 - p), 1e-12) / len(sel))
                assert abs(p_hat - p) < max(4 * sigma, 8e-3)

    def test_b1_law_conditional(self, dataset):
        for j in (3, 8, 12):
            phi = dataset.phases[j]
            rows = dataset.b[dataset.phase_index == j]
            for b2 in (0, 1):
                for b3 in (0, 1):
                    sel = rows[(rows[:, 1] == b2) & (rows[:, 2] == b3)]
                    if len(sel) < 200:
                        continue
                    p_hat = np.mean(sel[:, 0] == 0)
                    p = math.cos(phi / 2 - math.pi * b2 / 4 - math.pi * b3 / 8) ** 2
                    sigma = math.sqrt(max(p * (1 - p), 1e-12) / len(sel))
                    assert abs(p_hat - p) < max(4 * sigma, 1.2e-2)

    def test_discard_rate_phase_independent(self, dataset):
        # noiseless post-selection rates do not depend on the phase:
        # chi-square across the grid under the pooled acceptance rate
        attempts = np.array(
            [
                dataset.shot_index[dataset.phase_index == j].max() + 1
                for j in range(dataset.n_phases)
            ],
            dtype=float,
        )
        pooled = 4000 * dataset.n_phases / attempts.sum()
        assert abs(pooled - 1 / 16) < 0.01  # 1/8 (4-photon) x 1/2 (2-photon)
        z = (4000 - attempts * pooled) / np.sqrt(attempts * pooled * (1 - pooled))
        stat = float(np.sum(z**2))
        from scipy.stats import chi2

        assert stat < chi2.ppf(1 - 0.0027, df=dataset.n_phases - 1)

    def test_simulated_marginal_periodicities(self, dataset):
        # informative marginals repeat with periods pi/2 (b3) and pi (b2);
        # grid index shifts of 17/4-ish are unavailable, so compare the same
        # law through phases phi and phi + pi using the analytic chain checked
        # above plus a direct simulated comparison on aligned pairs
        n = dataset.n_phases
        p_b3 = np.zeros(n)
        p_b2 = np.zeros(n)
        for j in range(n):
            rows = dataset.b[dataset.phase_index == j]
            p_b3[j] = np.mean(rows[:, 2])
            p_b2[j] = np.mean(rows[:, 1])
        phases = dataset.phases
        analytic_b3 = 0.5 * (1 - np.cos(4 * phases))
        analytic_b2_quarter = 0.5 * (
            1
            - 0.5 * (1 + np.cos(4 * phases)) * np.cos(2 * phases)
            - 0.5 * (1 - np.cos(4 * phases)) * np.cos(2 * phases - math.pi / 2)
        )
        assert np.max(np.abs(p_b3 - analytic_b3)) < 0.03
        assert np.max(np.abs(p_b2 - analytic_b2_quarter)) < 0.03
        # the analytic forms make the periods explicit
        shifted = np.cos(4 * (phases + math.pi / 2))
        assert np.allclose(np.cos(4 * phases), shifted, atol=1e-12)

    def test_junk_bits_uniform(self, dataset):
        m = dataset.m
        for col in (0, 1, 2, 4):  # m6 m5 m4 m2
            frac = np.mean(m[:, col])
            assert abs(frac - 0.5) < 0.01


class TestSingleShotApis:
    def test_run_quantum_shot_at_pi(self):
        cfg = noiseless_config()
        rng = derive_rng(5, 0)
        records = []
        while len(records) < 20:
            rec = run_quantum_shot(math.pi, cfg, rng)
            if rec is not None:
                records.append(rec)
        assert all(r.b == (1, 0, 0) for r in records)

    def test_run_quantum_shot_at_quarter(self):
        cfg = noiseless_config()
        rng = derive_rng(6, 0)
        records = []
        while len(records) < 20:
            rec = run_quantum_shot(math.pi / 4, cfg, rng)
            if rec is not None:
                records.append(rec)
        assert all(r.b == (0, 0, 1) for r in records)

    def test_classical_shot_extremes(self):
        cfg = noiseless_config()
        rng = derive_rng(7, 0)
        for _ in range(10):
            assert run_classical_shot(0.0, cfg, rng) == (0,) * 7
            assert run_classical_shot(math.pi, cfg, rng) == (1,) * 7

    def test_classical_binomial_at_half(self):
        cfg = noiseless_config()
        rng = derive_rng(8, 0)
        totals = [sum(run_classical_shot(math.pi / 2, cfg, rng)) for _ in range(3000)]
        mean = np.mean(totals)
        sigma = math.sqrt(7 * 0.25 / 3000)
        assert abs(mean - 3.5) < 4 * sigma


class TestDistinguishabilityEffects:
    def test_delta_zero_b3_uniform(self):
        cfg = ProtocolConfig(
            n_phases=4,
            n_shots=3000,
            noise=NoiseConfig(delta=0.0, brightness=1.0),
            seed=21,
        )
        ds = simulate_quantum_dataset(cfg)
        for j in range(4):
            rows = ds.b[ds.phase_index == j]
            frac = np.mean(rows[:, 2])
            assert abs(frac - 0.5) < 4 * math.sqrt(0.25 / len(rows))

    def test_delta_visibility_law(self):
        delta = 0.7
        cfg = ProtocolConfig(
            n_phases=6,
            n_shots=5000,
            noise=NoiseConfig(delta=delta, brightness=1.0),
            seed=22,
        )
        ds = simulate_quantum_dataset(cfg)
        for j in (1, 4):
            phi = ds.phases[j]
            rows = ds.b[ds.phase_index == j]
            p_hat = np.mean(rows[:, 2] == 0)
            p = 0.5 * (1 + delta**2 * math.cos(4 * phi))
            sigma = math.sqrt(p * (1 - p) / len(rows))
            assert abs(p_hat - p) < 4 * sigma


class TestSweepAndMatching:
    def test_sweep_runs_ten_configurations(self):
        assert sum(len(v) for v in SWEEP_FLAGS.values()) == 10
        cfg = noiseless_config()
        rng = derive_rng(30, 0)
        seen = Counter()
        for _ in range(200):
            for out in run_configuration_sweep(0.9, cfg, rng):
                seen[(out.experiment, out.flags)] += 1
        assert set(seen) == {
            (n, flags) for n in SWEEP_FLAGS for flags in SWEEP_FLAGS[n]
        }

    def test_step1_parity_filter(self):
        rng = derive_rng(31, 0)
        outcomes = [
            # parity of the first three bits is 1, sigma_z off: dropped
            StepOutcome(4, (0, 0, 0), (1, 0, 0, 1)),
            # parity 1 with sigma_z on: kept
            StepOutcome(4, (1, 0, 0), (1, 0, 0, 1)),
            StepOutcome(2, (0, 1, 0), (0, 0)),
            StepOutcome(1, (0, 1, 0), (1,)),
        ]
        records = match_configurations(outcomes, rng)
        # the kept triple: b3 = 1 requires the 2-photon r2 flag on (it is) and
        # the 1-photon (r2, r3) = (b2, b3) = (0, 1): the listed 1-photon entry
        # has (1, 0): no agreement, so no records
        assert records == []

    def test_step3_agreement(self):
        rng = derive_rng(32, 0)
        outcomes = [
            StepOutcome(4, (1, 0, 0), (1, 0, 0, 1)),  # b3 = 1
            StepOutcome(2, (0, 1, 0), (0, 1)),  # r2 = 1 == b3, b2 = 1
            StepOutcome(1, (0, 1, 1), (1,)),  # (r2, r3) = (b2, b3) = (1, 1)
        ]
        records = match_configurations(outcomes, rng)
        assert len(records) == 1
        assert records[0].b == (1, 1, 1)
        assert records[0].m == (1, 0, 0, 1, 0, 1, 1)

    def test_public_wrapper_equals_array_core(self):
        cfg = noiseless_config()
        rng = derive_rng(33, 0)
        outcomes = []
        for _ in range(300):
            outcomes.extend(run_configuration_sweep(1.1, cfg, rng))
        groups = {4: ([], []), 2: ([], []), 1: ([], [])}
        for o in outcomes:
            groups[o.experiment][0].append(o.bits)
            groups[o.experiment][1].append(o.flags)
        args = []
        for n in (4, 2, 1):
            args.append(np.asarray(groups[n][0], dtype=np.int8).reshape(-1, n))
            args.append(np.asarray(groups[n][1], dtype=np.int8).reshape(-1, 3))
        direct = _match_arrays(*args, rng=derive_rng(34, 0))
        wrapped = match_configurations(outcomes, derive_rng(34, 0))
        assert [tuple(r) for r in direct.tolist()] == [r.m for r in wrapped]

    def test_matched_statistics_against_analytic_law(self):
        cfg = ProtocolConfig(n_phases=8, n_shots=600, noise=NOISELESS, seed=35)
        ds = simulate_sweep_dataset(cfg)
        # grid phases stay deterministic through the matching pipeline
        for j in range(8):
            rows = ds.m[ds.phase_index == j][:, [6, 5, 3]]
            expected = ((j >> 2) & 1, (j >> 1) & 1, j & 1)
            assert set(map(tuple, rows.tolist())) == {expected}


class TestNoiseChannels:
    def test_device_noise_preset_runs(self):
        cfg = ProtocolConfig(n_phases=3, n_shots=400, noise=DEVICE_NOISE, seed=41)
        ds = simulate_quantum_dataset(cfg)
        assert ds.stats["valid"] == 3 * 400

    def test_eta_increases_discards(self):
        base = ProtocolConfig(
            n_phases=2, n_shots=300, noise=NoiseConfig(delta=1.0, brightness=1.0), seed=42
        )
        lossy = ProtocolConfig(
            n_phases=2,
            n_shots=300,
            noise=NoiseConfig(delta=1.0, brightness=1.0, eta=0.7),
            seed=42,
        )
        a = simulate_quantum_dataset(base)
        b = simulate_quantum_dataset(lossy)
        assert b.stats["attempts"] > 1.5 * a.stats["attempts"]

    def test_programming_noise_breaks_grid_determinism(self):
        cfg = ProtocolConfig(
            n_phases=8,
            n_shots=400,
            noise=NoiseConfig(delta=1.0, brightness=1.0, sigma_theta=0.08, sigma_phi=0.08),
            seed=43,
        )
        ds = simulate_quantum_dataset(cfg)
        for j in range(8):
            per_phase = set(map(tuple, ds.b[ds.phase_index == j].tolist()))
            assert len(per_phase) > 1

    def test_unconditioned_source_matches_brightness(self):
        noise = NoiseConfig(delta=1.0, brightness=0.5, condition_on_emission=False)
        sim = StepSimulator(noise, seed=1)
        rng = derive_rng(44, 0)
        keys = sim.sample_class_keys(1, 40000, rng)
        emitted = np.mean((keys & 1) > 0)
        assert abs(emitted - 0.5) < 0.01


class TestDatasetFiles:
    def test_quantum_round_trip(self, tmp_path):
        ds = simulate_quantum_dataset(noiseless_config(n_phases=4, n_shots=30))
        path = tmp_path / "q.csv"
        write_quantum_csv(ds, path)
        back = read_quantum_csv(path)
        assert back.n_phases == 4
        assert np.array_equal(back.m, ds.m)
        assert np.array_equal(back.shot_index, ds.shot_index)
        assert np.allclose(back.phases, ds.phases)

    def test_classical_round_trip(self, tmp_path):
        ds = simulate_classical_dataset(noiseless_config(n_phases=4, n_shots=30))
        path = tmp_path / "c.csv"
        write_classical_csv(ds, path)
        back = read_classical_csv(path)
        assert np.array_equal(back.c, ds.c)

    def test_shot_index_preserves_gaps(self, tmp_path):
        ds = simulate_quantum_dataset(noiseless_config(n_phases=1, n_shots=100))
        idx = ds.shot_index
        assert idx.max() > 99  # discards leave gaps in the attempt numbering
        assert len(np.unique(idx)) == len(idx)

    def test_malformed_csv_reports_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        ds = simulate_quantum_dataset(noiseless_config(n_phases=1, n_shots=5))
        write_quantum_csv(ds, path)
        lines = path.read_text().splitlines()
        lines[3] = lines[3].rsplit(",", 1)[0]  # drop one column of row 4
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="row 4"):
            read_quantum_csv(path)
