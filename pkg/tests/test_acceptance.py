"""End-to-end acceptance checks, one test per shipped guarantee.

Each test prints a single verdict line to the real stdout (bypassing pytest
capture) so a plain ``pytest -v`` run shows the per-criterion outcome:

    [acceptance] criterion N (label): PASS | FAIL | SKIPPED

Criterion 8 needs an external tabular benchmark export and a real image batch;
point GEA_NAS_BENCH_JSONL and GEA_NAS_BATCH_FILE at them to enable it.
"""

import os
import sys

import numpy as np
import pytest
from scipy.stats import chisquare, mannwhitneyu

from gea_nas.arch_space import ArchEncoding, mutate, random_arch
from gea_nas.autodiff_core import grad_check
from gea_nas.benchmark_store import (
    NoisyProxySource,
    OracleProxySource,
    SyntheticLandscape,
    load_jsonl,
)
from gea_nas.guided_evolution import (
    EvolutionConfig,
    run_rea_baseline,
    run_search,
)
from gea_nas.network_builder import SkeletonConfig, build_network
from gea_nas.zero_proxy import (
    JacobianProxySource,
    ProxyConfig,
    aggregate,
    class_score,
    compute_jacobian,
    correlation_matrix,
    make_batch,
    read_batch_file,
    split_by_class,
)

BENCH_ENV = "GEA_NAS_BENCH_JSONL"
BATCH_ENV = "GEA_NAS_BATCH_FILE"


class _verdict:
    """Prints the one-line verdict when the block exits; failures propagate."""

    def __init__(self, number: int, label: str):
        self.number = number
        self.label = label

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        print(f"[acceptance] criterion {self.number} ({self.label}): {status}",
              file=sys.__stdout__)
        return False


def test_criterion_1_gradients_match_finite_differences():
    # 10 non-trivial architectures, 25 sampled input elements each, central
    # differences at step 1e-4 with the ReLU kink filter on.
    worst = 0.0
    with _verdict(1, "input gradients match finite differences"):
        count = 0
        i = 0
        while count < 10:
            rng = np.random.default_rng(np.random.SeedSequence((2024, i)))
            i += 1
            arch = random_arch(rng)
            if arch.index == 0:  # the empty cell has an identically zero path
                continue
            count += 1
            net = build_network(arch, rng=rng)
            x = rng.normal(size=(2,) + net.skeleton.input_shape)
            err = grad_check(net.graph, x, step=1e-4, num_samples=25, rng=rng)
            worst = max(worst, err)
        assert worst <= 1e-3, f"worst relative error {worst:.3e}"


def test_criterion_2_correlation_matrices_well_formed():
    # Every correlation matrix the proxy builds must be symmetric with a unit
    # diagonal and entries in [-1, 1], all to 1e-12.
    config = ProxyConfig()
    with _verdict(2, "correlation matrices well formed"):
        checked = 0
        for i in range(200):
            rng = np.random.default_rng(np.random.SeedSequence((9000, i)))
            arch = random_arch(rng)
            batch = make_batch(config, rng)
            net = build_network(arch, rng=rng)
            jac = compute_jacobian(net, batch)
            if jac.degenerate:
                continue
            for group in split_by_class(jac, batch.labels, batch.num_classes):
                sigma = correlation_matrix(group)
                if sigma is None:
                    continue
                checked += 1
                assert np.abs(sigma - sigma.T).max() <= 1e-12
                assert np.abs(np.diag(sigma) - 1.0).max() <= 1e-12
                assert np.abs(sigma).max() <= 1.0 + 1e-12
        assert checked >= 1000  # the sweep must actually exercise the check


def test_criterion_3_score_formula_closed_forms():
    config = ProxyConfig()
    small_tau = ProxyConfig(tau=2)
    with _verdict(3, "score formula closed forms"):
        ones2 = np.ones((2, 2))
        assert class_score(ones2, 2, config) == pytest.approx(
            4 * np.log(1 + 1e-5), abs=1e-12)
        eye2 = np.eye(2)
        assert class_score(eye2, 2, config) == pytest.approx(
            2 * np.log(1 + 1e-5) + 2 * np.log(1e-5), abs=1e-12)
        # past tau classes the per-class score is averaged over entries
        ones3 = np.ones((3, 3))
        assert class_score(ones3, 3, small_tau) == pytest.approx(
            np.log(1 + 1e-5), abs=1e-12)
        assert aggregate([-3.0, 5.0], 2, config) == pytest.approx(8.0, abs=1e-12)
        assert aggregate([1.0, 2.0, 4.0], 3, small_tau) == pytest.approx(
            2.0, abs=1e-12)


def test_criterion_4_mutation_and_aging():
    with _verdict(4, "single-op mutation and FIFO aging"):
        rng = np.random.default_rng(22)
        parent = random_arch(rng)
        edge_hits = np.zeros(6)
        for _ in range(10000):
            child = mutate(parent, rng)
            diff = [e for e in range(6) if child.ops[e] != parent.ops[e]]
            assert len(diff) == 1  # exactly one edge changes, to a new op
            edge_hits[diff[0]] += 1
        assert chisquare(edge_hits).pvalue > 0.01

        land = SyntheticLandscape(0)
        config = EvolutionConfig(C=150, P=5, S=2, seed=0)
        result = run_search(config, OracleProxySource(land), land)
        assert len(result.history) == 150
        assert result.num_fitness_evals == 150
        assert result.num_proxy_evals == 150 + 145 * 5
        assert len(result.cycle_log) == 145
        for log in result.cycle_log:
            # strict FIFO: after cycle c the population is births c+1 .. c+5
            assert log.population_births == tuple(range(log.cycle + 1, log.cycle + 6))


def test_criterion_5_guided_search_hits_top_architectures():
    # With a perfect proxy the search should land in the top 16 of 15625
    # (top 0.1%) on at least 95 of 100 landscapes.
    with _verdict(5, "guided search hits top architectures"):
        hits = 0
        for seed in range(100):
            land = SyntheticLandscape(seed)
            config = EvolutionConfig(C=150, P=5, S=2, seed=seed)
            result = run_search(config, OracleProxySource(land), land)
            rank = int((land.fitness > result.best.fitness).sum()) + 1
            hits += rank <= 16
        assert hits >= 95, f"only {hits}/100 runs reached the top 16"


def test_criterion_6_better_proxies_give_better_searches():
    land = SyntheticLandscape(0)
    with _verdict(6, "better proxies give better searches"):
        by_rho = {}
        for rho in (0.0, 0.5, 0.9):
            vals = []
            for seed in range(100):
                config = EvolutionConfig(C=150, P=5, S=2, seed=seed)
                proxy = NoisyProxySource(land, rho, seed=seed)
                vals.append(run_search(config, proxy, land).best.fitness)
            by_rho[rho] = vals
        rea = [run_rea_baseline(EvolutionConfig(C=150, P=5, S=2, seed=s), land)
               .best.fitness for s in range(100)]

        means = {rho: np.mean(v) for rho, v in by_rho.items()}
        assert means[0.9] >= means[0.5] >= means[0.0]
        assert mannwhitneyu(by_rho[0.9], by_rho[0.0],
                            alternative="greater").pvalue < 0.01
        assert mannwhitneyu(by_rho[0.9], rea, alternative="greater").pvalue < 0.01


def test_criterion_7_equal_trained_model_budgets():
    land = SyntheticLandscape(0)
    with _verdict(7, "equal trained-model budgets"):
        for c in (20, 40):
            for seed in range(5):
                config = EvolutionConfig(C=c, P=5, S=2, seed=seed)
                guided = run_search(config, OracleProxySource(land), land)
                plain = run_rea_baseline(config, land)
                assert guided.num_fitness_evals == c == plain.num_fitness_evals
                assert plain.num_proxy_evals == 0
                assert guided.num_proxy_evals == c + (c - 5) * 5


def test_criterion_8_benchmark_reproduction():
    bench = os.environ.get(BENCH_ENV)
    batch_path = os.environ.get(BATCH_ENV)
    if not bench or not batch_path:
        print(f"[acceptance] criterion 8 (benchmark reproduction): SKIPPED "
              f"(set {BENCH_ENV} and {BATCH_ENV})", file=sys.__stdout__)
        pytest.skip("external benchmark export not configured")

    store = load_jsonl(bench)
    assert store.complete.get("cifar10", False), "need a complete cifar10 export"
    batch = read_batch_file(batch_path)
    n, c, h, w = batch.images.shape
    assert h == w, "square images expected"
    skeleton = SkeletonConfig(in_channels=c, image_hw=h,
                              num_classes=batch.num_classes)

    with _verdict(8, "benchmark reproduction"):
        gea_test, rea_test, sims = [], [], []
        for seed in range(10):
            config = EvolutionConfig(C=150, P=5, S=2, seed=seed, dataset="cifar10")
            proxy = JacobianProxySource(batch, skeleton)
            guided = run_search(config, proxy, store)
            plain = run_rea_baseline(config, store)
            gea_test.append(guided.best.test_acc)
            rea_test.append(plain.best.test_acc)
            sims.append(guided.sim_time_seconds)
        assert 93.4 <= np.mean(rea_test) <= 94.3
        assert 93.6 <= np.mean(gea_test) <= 94.3
        # search cost should sit near the published scale, not orders off
        assert 18567 / 3 <= np.mean(sims) <= 3 * 18567
