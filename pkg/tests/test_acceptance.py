"""End-to-end acceptance gate; one PASS/FAIL line per criterion in the terminal summary."""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.special import i0

from activepose import harness as H
from activepose import policy as pol
from activepose.fusion import fuse, reconstruction_error
from activepose.identity import hungarian_assign
from activepose.rollout import AgentPolicy, continue_reward, run_active_sequence, viewpoint_reward
from policy_oracle import KAPPA, composite_simpson, fd_gradient, gradient_triple, relative_error


def test_reward_exactness(report):
    t = time.perf_counter()
    cases = [
        (viewpoint_reward(3, False, 200.1, 120.9, True), 1 - 120.9 / 200.1),
        (round(viewpoint_reward(3, False, 200.1, 120.9, True), 4), 0.3958),
        (continue_reward(1, [104.0, 140.0], 160.0, 200.0, 140.0, False, 0.07), 0.28),
        (continue_reward(1, [160.0, 170.0], 160.0, 200.0, 170.0, False, 0.07), -0.07),
        (viewpoint_reward(1, True, 200.0, 100.0, False), -2.5),
        (viewpoint_reward(1, False, 200.0, 100.0, False), 0.0),
        (continue_reward(4, [], 100.0, 250.0, 100.0, True), 1 - 100.0 / 250.0),
    ]
    worst = max(abs(a - b) for a, b in cases)
    secs = time.perf_counter() - t
    ok = worst <= 1e-12 and secs < 1.0
    report(1, ok, f"reward exactness: max deviation {worst:.1e} (tol 1e-12), {secs:.3f} s (limit 1 s)")
    assert ok


def test_gradient_correctness(report):
    t = time.perf_counter()
    cfg = pol.PolicyConfig()
    rng = np.random.default_rng(2024)
    worst, heads = 0.0, set()
    for k in range(20):
        params, state, action, prec = gradient_triple(rng, cfg, k)
        heads.add((action.continue_flag, prec))
        g = pol.grad_log_density(params, state, action, prec, KAPPA)
        coords = [(n, int(i)) for n in pol.PARAM_NAMES
                  for i in rng.choice(params[n].size, min(8, params[n].size), replace=False)]
        fd = fd_gradient(params, state, action, prec, KAPPA, coords)
        analytic = np.array([g[n].ravel()[i] for n, i in coords])
        worst = max(worst, float(relative_error(analytic, fd).max()))
    secs = time.perf_counter() - t
    ok = worst < 1e-4 and secs < 30 and len(heads) == 6
    report(2, ok, f"gradient check: worst relative error {worst:.1e} on 20 triples (tol 1e-4), "
                  f"{secs:.1f} s (limit 30 s)")
    assert ok


def test_distribution_correctness(report):
    masses = []
    for m in (1.0, 10.0, 25.0, 50.0):
        masses.append(composite_simpson(lambda x: pol.von_mises_density(x, 0.4, m), -math.pi, math.pi))
        for mean in (-0.9, 0.0, 0.8):
            masses.append(composite_simpson(
                lambda x: np.exp(pol.truncated_von_mises_logpdf(x, mean, m, KAPPA)), -KAPPA, KAPPA))
    mass_err = max(abs(v - 1) for v in masses)

    rng = np.random.default_rng(11)
    mean = -2.0
    xs = np.array([pol.sample_von_mises(rng, mean, 25.0)[0] for _ in range(100_000)])
    circ_err = abs(math.remainder(math.atan2(np.sin(xs).mean(), np.cos(xs).mean()) - mean, 2 * math.pi))

    n, bins = 100_000, 36
    us = np.array([pol.sample_von_mises(rng, 0.3, 0.0)[0] for _ in range(n)])
    counts = np.histogram(us, bins=bins, range=(-math.pi, math.pi))[0]
    sd = math.sqrt(n / bins * (1 - 1 / bins))
    worst_z = float(np.max(np.abs(counts - n / bins)) / sd)
    assert pol.bessel_i0(25.0) == pytest.approx(i0(25.0), rel=1e-12)

    ok = mass_err < 1e-6 and circ_err < 0.02 and worst_z <= 3
    report(3, ok, f"distributions: mass error {mass_err:.1e}, circular mean error {circ_err:.4f} rad, "
                  f"uniform worst bin {worst_z:.2f} sd")
    assert ok


def test_hungarian_optimality(report):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    perms = {n: np.array(list(itertools.permutations(range(n)))) for n in range(2, 8)}
    mismatches = 0
    for i in range(1000):
        n = 2 + i % 6
        cost = rng.uniform(0, 1, (n, n)) if i % 2 else rng.integers(0, 4, (n, n)).astype(float)
        _, _, total = hungarian_assign(cost)
        brute = cost[np.arange(n), perms[n]].sum(axis=1).min()
        mismatches += abs(total - brute) > 1e-12
    secs = time.perf_counter() - t
    ok = mismatches == 0 and secs < 10
    report(4, ok, f"assignment: {mismatches} mismatches vs brute force on 1000 matrices, {secs:.2f} s (limit 10 s)")
    assert ok


def test_fusion_properties(report):
    rng = np.random.default_rng(8)
    failures = 0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        xs = list(rng.normal(0, 200, (n, 15, 3)))
        prior = rng.normal(0, 200, (15, 3)) if rng.random() < 0.5 else None
        out = fuse(prior, xs)
        stack = np.stack(xs + ([prior] if prior is not None else []))
        failures += not np.array_equal(fuse(prior, [xs[i] for i in rng.permutation(n)]), out)
        failures += not np.array_equal(fuse(None, [xs[0]] * n), xs[0])
        failures += not (np.all(out >= stack.min(axis=0)) and np.all(out <= stack.max(axis=0)))
        a, b = rng.normal(0, 100, (2, 15, 3))
        failures += reconstruction_error(a, b) != reconstruction_error(b, a)
        failures += reconstruction_error(a, a) != 0.0 or not reconstruction_error(a, b) > 0
    report(5, failures == 0, f"fusion and error properties: {failures} violations on 1000 instances")
    assert failures == 0


# -- trained-agent criteria ----------------------------------------------------------------


@pytest.fixture(scope="module")
def comparison(trained):
    records, k = H.compare(trained.cfg, trained.params(), trained.scenes)
    return H.table_from_records(records), k


@pytest.mark.slow
def test_end_to_end_ordering(trained, comparison, report):
    table, k = comparison
    auto, fixed = table.get(H.AGENT, "auto"), table.get(H.AGENT, str(k))
    rand, oracle = table.get("Random", str(k)), table.get("Oracle", str(k))
    margin = rand.error_mm - auto.error_mm
    halfwidth = max(auto.ci_mm, rand.ci_mm)
    slowest = max(trained.seconds[False, s] for s in trained.cfg.seeds)
    ok = (oracle.error_mm <= auto.error_mm <= rand.error_mm and margin > halfwidth
          and auto.error_mm <= 1.05 * fixed.error_mm and slowest <= 15 * 60)
    report(6, ok, f"ordering at k={k}: Oracle {oracle.error_mm:.2f} <= auto {auto.error_mm:.2f} "
                  f"({auto.views:.2f} views) <= Random {rand.error_mm:.2f}; margin {margin:.2f} vs CI "
                  f"{halfwidth:.2f}; fixed {fixed.error_mm:.2f}; Max-Azim {table.get('Max-Azim').error_mm:.2f}; "
                  f"slowest training {slowest:.0f} s")
    assert ok


@pytest.mark.slow
def test_ablation_direction(trained, comparison, report):
    _, k = comparison
    records = H.ablate(trained.cfg, trained.params(), trained.params(base_only=True), k, trained.scenes)
    table = H.table_from_records(records)
    full, base, reset = (table.get(m).error_mm for m in ("full", "B^t only", "reset"))
    ok = full <= base and full <= reset
    report(7, ok, f"ablations at k={k}: full {full:.2f}, B^t only {base:.2f}, reset {reset:.2f}")
    assert ok


@pytest.mark.slow
def test_runtime_model(trained, report):
    cfg = trained.cfg.replace(test_episodes=6)
    rows = H.curve(cfg, trained.params(), trained.scenes)
    per_view = cfg.view_seconds + cfg.action_seconds
    ok = True
    worst = 0.0
    for k in range(1, cfg.curve_max_k + 1):
        at_k = {r["model"]: r for r in rows if r["k"] == k}
        oracle = at_k.pop("Oracle")
        ok &= all(oracle["runtime_s"] > r["runtime_s"] for r in at_k.values())
        for r in at_k.values():
            worst = max(worst, abs(r["runtime_s"] - per_view * r["views"]))
    ok &= worst < 1e-9
    report(8, ok, f"runtime model: Oracle slowest at every k in 1..{cfg.curve_max_k}; "
                  f"non-oracle deviation from 0.61 s/view + 0.01 s/action {worst:.1e} s")
    assert ok


@pytest.mark.slow
def test_determinism(trained, tmp_path, report):
    cfg, seed = trained.cfg, trained.cfg.seeds[0]
    again = H.train_agent(cfg, seed, trained.scenes)
    first = trained.results()[seed]
    for i, res in enumerate((first, again)):
        H.save_agent(H.checkpoint_path(tmp_path / str(i), seed), res, cfg, seed)
    ckpt = [(tmp_path / str(i) / "checkpoints" / f"pose-drl_seed{seed}.bin").read_bytes() for i in range(2)]
    same_ckpt = ckpt[0] == ckpt[1]

    ep = H.test_episodes(cfg, trained.scenes["test"], cfg.rollout_config())[0]
    dumps = [run_active_sequence(ep, AgentPolicy(again.params, cfg.policy_config(), cfg.test_precisions,
                                                 np.random.default_rng(9))).dump() for _ in range(2)]
    same_traj = dumps[0] == dumps[1]

    one = cfg.replace(seeds=(seed,))
    tables = [H.records_csv_text(H.compare(one, {seed: again.params}, trained.scenes)[0]) for _ in range(2)]
    same_table = tables[0] == tables[1]
    ok = same_ckpt and same_traj and same_table
    report(9, ok, f"determinism: checkpoints {'identical' if same_ckpt else 'differ'}, trajectories "
                  f"{'identical' if same_traj else 'differ'}, result tables {'identical' if same_table else 'differ'}")
    assert ok
