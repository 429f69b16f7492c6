"""Acceptance gate: one test per criterion, each recorded as a PASS/FAIL summary line."""
import hashlib
import math
import shutil
import time
from math import pi
from pathlib import Path

import numpy as np
import pytest
from conftest import record
from scipy.optimize import bisect

from lensgsa import cli
from lensgsa import dataset as D
from lensgsa import surrogate as S
from lensgsa.assembly import (
    AssemblyParams,
    AssemblyState,
    gaps,
    residual,
    solve_assembly,
    solve_stage,
    tangent,
)
from lensgsa.config import load_config
from lensgsa.propagate import propagate
from lensgsa.sobol import estimate_indices, run_convergence, saltelli_matrices

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "configs" / "default.json"


def ishigami(X, a=7.0, b=0.1):
    return np.sin(X[:, 0]) + a * np.sin(X[:, 1]) ** 2 + b * X[:, 2] ** 4 * np.sin(X[:, 0])


def ishigami_totals(a=7.0, b=0.1):
    V = a**2 / 8 + b * pi**4 / 5 + b**2 * pi**8 / 18 + 0.5
    V1 = 0.5 * (1 + b * pi**4 / 5) ** 2
    V13 = b**2 * pi**8 * (1 / 18 - 1 / 50)
    return np.array([V1 + V13, a**2 / 8, V13]) / V


def saltelli(f, n, d, seed, lo=0.0, hi=1.0):
    A, B, AB = saltelli_matrices(n, [lo] * d, [hi] * d, seed=seed)
    return estimate_indices(f(A), f(B), [f(M) for M in AB])


@pytest.fixture(scope="module")
def config():
    return load_config(DEFAULT_CONFIG)


@pytest.fixture(scope="module")
def trained(config):
    """The default pipeline's dataset and 64x4 surrogate, built once."""
    t0 = time.perf_counter()
    dc = config.dataset
    X = D.sample_inputs(dc.size, dc.lower, dc.upper, seed=dc.seed)
    ds = D.generate(X, config.assembly.to_params(), seed=dc.seed)
    ds = D.split(ds, seed=dc.split_seed, n_train=dc.n_train, n_test=dc.n_test)
    net_cfg = config.network.to_config()
    net, _ = S.train(S.init(net_cfg), D.standardize(ds), net_cfg)
    return ds, net, time.perf_counter() - t0


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    net = S.init(S.NetworkConfig(hidden_layers=2, hidden_width=8, dropout=0.0, seed=11))
    assert net.config.layer_sizes == [4, 8, 8, 24]
    rng = np.random.default_rng(12)
    X, Y = rng.normal(size=(10, 4)), rng.normal(size=(10, 24))
    _, (dW, db) = S.backward(net, X, Y)
    # an entry passes if within 1e-5 relative or 1e-8 absolute; track the ratio to that tolerance
    h, worst, worst_abs = 1e-6, 0.0, 0.0
    for params, grads in ((net.weights, dW), (net.biases, db)):
        for P, G in zip(params, grads):
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + h
                lp = S.mse(Y, S.forward(net, X))
                P[idx] = old - h
                lm = S.mse(Y, S.forward(net, X))
                P[idx] = old
                fd = (lp - lm) / (2 * h)
                diff = abs(G[idx] - fd)
                worst = max(worst, diff / max(1e-5 * max(abs(G[idx]), abs(fd)), 1e-8))
                worst_abs = max(worst_abs, diff)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1 and elapsed < 10
    assert record(1, ok, f"max |backprop - FD| {worst_abs:.1e} ({worst:.3f} of tolerance) over "
                         f"{net.n_parameters} params, {elapsed:.2f} s")


def test_criterion_2_solver():
    p = AssemblyParams()
    rng = np.random.default_rng(21)
    # analytic tangent vs central differences at 100 states away from the contact onset
    worst_tangent, n_states = 0.0, 0
    while n_states < 100:
        k = int(rng.integers(1, 5))
        state = AssemblyState(rng.uniform(0, 2, 4), rng.uniform(-1, 2, 4), k)
        x = rng.uniform(2, 5, 4)
        if np.any(np.abs(gaps(np.where(np.arange(4) < k, state.w, 0), x, p) - p.contact.c0) < 1e-3):
            continue
        u0 = state.unknowns()
        F = np.empty((u0.size, u0.size))
        for j in range(u0.size):
            up, um = u0.copy(), u0.copy()
            up[j] += 1e-6
            um[j] -= 1e-6
            F[:, j] = (residual(state.with_unknowns(up), x, p)
                       - residual(state.with_unknowns(um), x, p)) / 2e-6
        J = tangent(state, x, p)
        worst_tangent = max(worst_tangent, float(np.max(np.abs(J - F) / np.maximum(np.abs(F), 1.0))))
        n_states += 1

    # single linear-spring lens against scalar bisection
    q = AssemblyParams(q_r=0.0, gamma=0.0)
    worst_bisect = 0.0
    for x1 in np.linspace(2.0, 3.45, 8):
        law = q.contact

        def f(w):
            g = x1 + w
            pr = law.p0 * (math.exp((law.c0 - g) / law.c0) - 1) / (math.e - 1) if g < law.c0 else 0.0
            return q.k_r * w - pr

        root = bisect(f, 0.0, 5.0, xtol=1e-14, maxiter=200)
        got = solve_stage(AssemblyState.zeros(1), [x1, 5, 5, 5], q).w[0]
        worst_bisect = max(worst_bisect, abs(got - root))

    worst_res = 0.0
    for x in rng.uniform(2, 5, (1000, 4)):
        s = solve_assembly(x, p)
        worst_res = max(worst_res, float(np.linalg.norm(residual(s, x, p), np.inf)))
    ok = worst_tangent <= 1e-5 and worst_bisect <= 1e-8 and worst_res <= 1e-10
    assert record(2, ok, f"tangent FD {worst_tangent:.1e}, bisection {worst_bisect:.1e}, "
                         f"max residual {worst_res:.1e} on 1000 inputs")


def test_criterion_3_ishigami():
    t0 = time.perf_counter()
    res = run_convergence(ishigami, [-pi] * 3, [pi] * 3, n_start=100, n_max=2**16, seed=0)
    elapsed = time.perf_counter() - t0
    exact = ishigami_totals()
    dev = np.abs(res.total - exact).max()
    ok = dev <= 0.02 and elapsed < 60
    assert record(3, ok, f"S_T {np.round(res.total, 4).tolist()} vs {np.round(exact, 4).tolist()}, "
                         f"max dev {dev:.4f}, {elapsed:.2f} s")


EXPECTED_DOMINANT = {1: 0, 2: 3, 3: 1, 4: 2}  # lens -> barrel_lens1, lens1_lens2, barrel_lens3, barrel_lens4


def test_criterion_4_sobol_structure(trained, config):
    _, net, _ = trained
    sc = config.sobol
    res = run_convergence(lambda X: S.predict(net, X), sc.lower, sc.upper, n_start=sc.n_start,
                          n_max=sc.n_max, seed=sc.seed)
    expected = np.repeat([EXPECTED_DOMINANT[k] for k in (1, 2, 3, 4)], 6)
    got = np.argmax(res.total, axis=0)
    ok = np.array_equal(got, expected)
    margin = np.sort(res.total, axis=0)[-1] - np.sort(res.total, axis=0)[-2]
    assert record(4, ok, f"{int(np.sum(got == expected))}/24 outputs match the lens pattern, "
                         f"smallest dominance margin {margin.min():.3f}")


def test_criterion_5_surrogate_quality(trained):
    ds, net, elapsed = trained
    m = S.evaluate(net, ds, "test")
    ok = m.r2 >= 0.98 and m.avg_pct_err <= 3.0 and elapsed < 600
    assert record(5, ok, f"test R2 {m.r2:.5f}, avg {m.avg_pct_err:.3f}%, max {m.max_pct_err:.3f}%, "
                         f"{net.n_parameters} params, data+training {elapsed:.1f} s")


def test_criterion_6_estimator_sanity():
    S1, ST = saltelli(lambda X: X[:, 0] + 2 * X[:, 1], 2**14, 2, seed=61)
    additive_ok = np.all(np.abs(ST - [0.2, 0.8]) <= 0.02)
    sums = [S1.sum()]
    for f, d, lo, hi in ((lambda X: X[:, 0], 3, 0, 1),
                         (lambda X: X[:, 0] + X[:, 1] ** 2 + 2 * X[:, 0] * X[:, 1], 2, 0, 1),
                         (ishigami, 3, -pi, pi)):
        sums.append(saltelli(f, 2**14, d, seed=62, lo=lo, hi=hi)[0].sum())
    ok = additive_ok and max(sums) <= 1.05
    assert record(6, ok, f"S_T {np.round(ST, 4).tolist()} vs [0.2, 0.8]; max sum S_i {max(sums):.4f}")


def test_criterion_7_uq_protocol(trained, config):
    _, net, _ = trained
    pc = config.propagate
    res = propagate(lambda X: S.predict(net, X), pc.lower, pc.upper, n_final=pc.n_final,
                    seed=pc.seed, n_bins=pc.n_bins)
    sizes_ok = res.sample_sizes() == [100, 200, 400, 800, 1600, 3200, 6400, 12800]
    m64, m128 = res.trace[-2].mean, res.trace[-1].mean
    conv = np.max(np.abs(m64 - m128) / (5 * res.std / np.sqrt(6400)))
    area = max(abs(h.area - 1) for h in res.histograms)

    a, b = pc.lower[0], pc.upper[0]
    ident = propagate(lambda X: X[:, :1], pc.lower, pc.upper, n_final=12800, seed=pc.seed)
    sd = (b - a) / math.sqrt(12)
    se_mean = sd / math.sqrt(12800)
    se_sd = math.sqrt(((b - a) ** 4 / 80 - sd**4) / (4 * 12800 * sd**2))
    z_mean = abs(ident.mean[0] - (a + b) / 2) / se_mean
    z_sd = abs(ident.std[0] - sd) / se_sd
    ok = sizes_ok and conv <= 1 and area <= 1e-9 and z_mean <= 3 and z_sd <= 3
    assert record(7, ok, f"8 levels {sizes_ok}, max |dmean|/bound {conv:.3f}, max area error {area:.1e}, "
                         f"identity z-scores mean {z_mean:.2f} std {z_sd:.2f}")


def test_criterion_8_brute_force_quadrature():
    def f(X):
        return X[:, 0] + X[:, 1] ** 2 + 2.0 * X[:, 0] * X[:, 1]

    n = 512
    t = (np.arange(n) + 0.5) / n
    G1, G2 = np.meshgrid(t, t, indexing="ij")
    F = f(np.column_stack((G1.ravel(), G2.ravel()))).reshape(n, n)
    f0 = F.mean()
    f1, f2 = F.mean(axis=1) - f0, F.mean(axis=0) - f0
    f12 = F - f0 - f1[:, None] - f2[None, :]
    V = np.mean((F - f0) ** 2)
    V1, V2, V12 = np.mean(f1**2), np.mean(f2**2), np.mean(f12**2)
    exact_first = np.array([V1, V2]) / V
    exact_total = np.array([V1 + V12, V2 + V12]) / V
    S1, ST = saltelli(f, 2**17, 2, seed=81)
    dev = max(np.abs(S1 - exact_first).max(), np.abs(ST - exact_total).max())
    assert record(8, dev <= 0.01, f"quadrature S_i {np.round(exact_first, 4).tolist()} "
                                  f"S_T {np.round(exact_total, 4).tolist()}, max Saltelli dev {dev:.4f}")


def _digests(out: Path) -> dict:
    return {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*")) if p.suffix in (".csv", ".json", ".svg")}


def test_criterion_9_determinism(tmp_path):
    out = tmp_path / "run"
    runs = []
    for _ in range(2):
        shutil.rmtree(out, ignore_errors=True)
        assert cli.main(["run-all", "--config", str(DEFAULT_CONFIG), "--out", str(out), "-q"]) == 0
        runs.append(_digests(out))
    same = runs[0] == runs[1]
    differing = sorted(k for k in runs[0] if runs[0][k] != runs[1].get(k))
    assert record(9, same and len(runs[0]) > 50,
                  f"{len(runs[0])} CSV/JSON/SVG artifacts, differing: {differing or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
