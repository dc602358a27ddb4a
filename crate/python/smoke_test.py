"""Smoke test for the cgvamp_py extension.

Build and run from the repository root:

    cargo build --release -p cgvamp-py --features extension-module
    cp target/release/libcgvamp_py.so python/cgvamp_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

import cgvamp_py as cv

RUN = """
variant = "cgvamp"
t_max = 6
oracle = true

[inner]
policy = "acg"
c = 0.9
delta_threshold = 0.015
i_max = 100

[operator]
kind = "fijl"
n = 2048
m = 512
kappa = 100.0
seed = 3

[signal]
sparsity = 0.1
seed = 4

[noise]
snr_db = 40.0
seed = 5
"""


def check_operator():
    op = cv.Operator.fijl(256, 64, 100.0, seed=1)
    assert (op.n, op.m) == (256, 64)
    assert abs(op.delta - 0.25) < 1e-15
    rng = np.random.default_rng(0)
    x = rng.standard_normal(256)
    u = rng.standard_normal(64)
    lhs = np.dot(op.forward(list(x)), u)
    rhs = np.dot(x, op.adjoint(list(u)))
    assert abs(lhs - rhs) <= 1e-9 * abs(lhs), (lhs, rhs)
    s = np.array(op.spectrum())
    assert abs(np.sum(s**2) / 256 - 1.0) < 1e-12
    assert abs(s[0] / s[-1] - 100.0) < 1e-8
    w = np.array(op.apply_w(list(u), 0.1, 1.0))
    assert np.dot(u, w) >= 0.1 * np.dot(u, u)
    try:
        op.forward([1.0, 2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("wrong length accepted")


def check_denoiser():
    r = [-3.0, -0.1, 0.0, 0.2, 5.0]
    out = cv.soft_threshold(r, 1.0, 1.0)
    assert out == [-2.0, 0.0, 0.0, 0.0, 4.0], out
    assert abs(cv.soft_threshold_divergence(r, 1.0, 1.0) - 0.4) < 1e-15
    rng = np.random.default_rng(1)
    big = list(rng.standard_normal(16384) * 2.0)
    exact = cv.soft_threshold_divergence(big, 1.0, 1.4)
    est = cv.mc_divergence(big, 1.0, 1.4, probes=1, seed=3)
    assert abs(est - exact) < 0.02, (est, exact)
    x_ba, gamma_b, _ = cv.block_b(big, 1.0, 1.4)
    assert len(x_ba) == len(big) and 0.0 < gamma_b < 1.0


def check_inner_solver():
    op = cv.Operator.dense(512, 128, 100.0, seed=5)
    z = list(np.random.default_rng(7).standard_normal(128))
    out = cv.run_acg(z, op, 0.01, 1.0)
    assert out["iterations"] > 1
    assert out["gamma"] < 0.0
    assert len(out["mu"]) == 128
    assert len(out["v_ab_history"]) == out["iterations"]
    only_target = cv.run_acg(z, op, 0.01, 1.0, delta_threshold=math.inf)
    assert only_target["iterations"] == 1
    assert cv.estimate_v_ba([0.0] * 128, 0.0, op) == 0.0


def check_run_and_audit():
    out = cv.run(RUN)
    assert out["error"] is None
    recs = out["records"]
    assert len(recs) == 6
    assert recs[-1]["nmse_db"] < recs[0]["nmse_db"]
    assert all(r["gamma_a"] < 0.0 for r in recs)
    assert all(r["oracle_v_ab"] is not None for r in recs)
    again = cv.run(RUN)
    assert again["estimate"] == out["estimate"]
    assert cv.run(RUN, seed=9)["config_hash"] != out["config_hash"]
    checks = cv.audit(RUN, [0, 1])
    assert len(checks) == 5
    for name, worst, bound, ok in checks:
        assert isinstance(name, str) and math.isfinite(bound)
        print(("PASS" if ok else "FAIL"), name, f"{worst:.4g} (bound {bound:.4g})")
    try:
        cv.run("variant = 'nope'")
    except ValueError:
        pass
    else:
        raise AssertionError("bad config accepted")


if __name__ == "__main__":
    check_operator()
    check_denoiser()
    check_inner_solver()
    check_run_and_audit()
    print("smoke test ok")
