"""Fast oracle and property checks behind `gofar selftest`.

Each check prints one PASS/FAIL line; the exit status is nonzero iff any
check fails.  These are quick smoke versions of the full acceptance tests
(small instance counts, same tolerances).
"""

from __future__ import annotations

import tempfile

import numpy as np

from . import dataset as ds
from .fdiv import CHI2, FDivergence, conjugate_oracle, f_star_value
from .harness import MetricsRecord, records_to_rows, write_csv
from .mdp import TabularPolicy, random_mdp, validate
from .nets import init_mlp, mlp_forward, mlp_grad
from .occupancy import flow_residual, prop1_gap, solve_occupancy
from .tabular import (build_system, dual_value, primal_oracle, recover_dstar,
                      solve_dual_chi2, total_variation)


def _check_duality(rng) -> tuple:
    worst = 0.0
    for _ in range(5):
        mdp = random_mdp(4, 3, 3, gamma=0.9, rng=rng)
        behavior = TabularPolicy.uniform(mdp)
        d_off = solve_occupancy(mdp, behavior)
        system = build_system(mdp, d_off)
        v_star = solve_dual_chi2(system, mdp.gamma)
        dual = dual_value(system, mdp.gamma, v_star, exact_conjugate=True)
        d_primal, primal = primal_oracle(mdp, d_off)
        d_dual = recover_dstar(system, v_star, mdp.gamma)
        worst = max(worst, abs(dual - primal),
                    total_variation(d_dual, d_primal))
    return worst <= 1e-3, f"worst gap/TV {worst:.2e}"


def _check_prop1(rng) -> tuple:
    worst = 0.0
    for _ in range(5):
        mdp = random_mdp(4, 3, 3, gamma=0.9, rng=rng)
        lhs, rhs = prop1_gap(mdp, TabularPolicy.uniform(mdp))
        worst = max(worst, abs(lhs - rhs))
    return worst <= 1e-8, f"worst identity gap {worst:.2e}"


def _check_fenchel(rng) -> tuple:
    # grid maximizes over ratios x >= 0; the analytic convention carries a
    # constant +1/2 offset relative to that exact conjugate for y >= -1
    div = FDivergence(CHI2)
    worst = 0.0
    for y in np.linspace(-1.0, 5.0, 13):
        grid, _ = conjugate_oracle(div, float(y), x_max=50.0, step=1e-3)
        worst = max(worst, abs(grid + 0.5 - float(f_star_value(div, y))))
    return worst <= 1e-5, f"worst conjugate error {worst:.2e}"


def _check_gradients(rng) -> tuple:
    params = init_mlp([5, 8, 8, 2], rng)
    x = rng.normal(size=(4, 5))
    upstream = rng.normal(size=(4, 2))
    grads, _ = mlp_grad(params, x, upstream)
    worst = 0.0
    h = 1e-5
    for arr, garr in zip(params.weights + params.biases,
                         grads.weights + grads.biases):
        for _ in range(4):  # spot check a few coordinates per tensor
            idx = tuple(rng.integers(0, n) for n in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = float((mlp_forward(params, x) * upstream).sum())
            arr[idx] = old - h
            dn = float((mlp_forward(params, x) * upstream).sum())
            arr[idx] = old
            num = (up - dn) / (2 * h)
            denom = max(abs(num), abs(garr[idx]), 1e-8)
            worst = max(worst, abs(num - garr[idx]) / denom)
    return worst < 1e-4, f"worst relative gradient error {worst:.2e}"


def _check_determinism(rng) -> tuple:
    mdp = random_mdp(4, 3, 3, gamma=0.9, rng=np.random.default_rng(11))
    pol = TabularPolicy.uniform(mdp)
    outs = []
    for _ in range(2):
        data = ds.collect(mdp, pol, n_traj=5, horizon=10, seed=3,
                          descriptor="u")
        recs = [MetricsRecord(discounted_return=float(len(t.transitions)),
                              success=True, final_distance=0.0,
                              episode_length=10, seed=3)
                for t in data.trajectories]
        with tempfile.NamedTemporaryFile(suffix=".csv", delete=False) as fh:
            path = fh.name
        write_csv(path, records_to_rows(recs))
        outs.append(open(path, "rb").read())
    return outs[0] == outs[1], "byte-identical rerun"


def _check_flow(rng) -> tuple:
    mdp = random_mdp(5, 3, 4, gamma=0.9, rng=rng)
    errs = validate(mdp)
    occ = solve_occupancy(mdp, TabularPolicy.uniform(mdp))
    res = flow_residual(mdp, occ)
    return not errs and res <= 1e-9, f"flow residual {res:.2e}"


CHECKS = [
    ("mdp-and-bellman-flow", _check_flow),
    ("strong-duality-chi2", _check_duality),
    ("occupancy-identity", _check_prop1),
    ("fenchel-conjugate-grid", _check_fenchel),
    ("network-gradients", _check_gradients),
    ("csv-determinism", _check_determinism),
]


def run_selftest() -> int:
    rng = np.random.default_rng(0)
    failures = 0
    for name, fn in CHECKS:
        ok, detail = fn(rng)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += 0 if ok else 1
    return 1 if failures else 0
