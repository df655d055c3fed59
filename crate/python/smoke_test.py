"""Smoke test for the fairdcov_py extension module.

Build the library first:

    cargo build --release -p fairdcov-py --features extension-module
    python3 python/smoke_test.py

If the module is not importable, the script loads the freshly built shared
library from target/release (or target/debug).
"""

import importlib.util
import math
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load():
    try:
        import fairdcov_py

        return fairdcov_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libfairdcov_py.so", "libfairdcov_py.dylib", "fairdcov_py.dll"):
            path = ROOT / "target" / profile / name
            if path.exists():
                spec = importlib.util.spec_from_file_location("fairdcov_py", path)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("fairdcov_py not built; run cargo build --release -p fairdcov-py --features extension-module")


def check(cond, what):
    if not cond:
        raise AssertionError(what)
    print(f"ok  {what}")


def main():
    fd = load()
    rng = random.Random(0)

    x = [rng.gauss(0, 1) for _ in range(200)]
    y = [v + 0.3 * rng.gauss(0, 1) for v in x]
    z = [rng.gauss(0, 1) for _ in range(200)]
    sx, sy, sz = fd.Sample.column(x), fd.Sample.column(y), fd.Sample.column(z)
    check(sx.n == 200 and sx.p == 1, "Sample.column shape")

    dep, ind = fd.dcov2(sx, sy), fd.dcov2(sx, sz)
    check(dep > 10 * abs(ind), f"dependent dcov2 {dep:.4f} dominates independent {ind:.4f}")
    check(math.isclose(dep, fd.dcov2_expanded(sx, sy), rel_tol=1e-10), "unbiased and expanded forms agree")

    a = [rng.randint(0, 1) for _ in range(200)]
    b = [rng.randint(0, 2) for _ in range(200)]
    onehot = fd.Sample([[float(v == k) for k in range(3)] for v in b])
    sa = fd.Sample.column([float(v) for v in a])
    dec = fd.ccdcov_decompose(sz, [sa, onehot])
    check(
        math.isclose(sum(dec["marginal_terms"]) + dec["eta"], dec["total"], abs_tol=1e-12),
        "CCdCov terms add up",
    )
    check(math.isclose(fd.ccdcov(sz, [sa, onehot]), dec["total"], abs_tol=1e-8), "ccdcov matches its decomposition")
    jd = fd.jdcov_decompose([sz, sa, onehot])
    check(len(jd["pred_attr_terms"]) == 2 and len(jd["attr_attr_terms"]) == 1, "JdCov term layout")
    check(math.isclose(fd.jdcov2([sz, sa, onehot]), jd["total"], abs_tol=1e-12), "jdcov2 matches its decomposition")

    yhat = [min(max(0.5 + 0.1 * v, 0.0), 1.0) for v in z]
    check(fd.js_divergence(yhat, [a, b]) >= 0.0, "JS divergence is non-negative")
    check(fd.uf_metric(yhat, [a]) >= 0.0, "UF is non-negative")
    perm = fd.permutation_test(fd.Sample.column(yhat), [sa, onehot], replicates=99, seed=3)
    check(0.01 <= perm["p_value"] <= 1.0, f"permutation p-value {perm['p_value']:.3f} in range")
    check(0.0 <= fd.chi2_test(fd.Sample.column(yhat), [sa, onehot])["p_value"] <= 1.0, "chi2 p-value in range")

    check(fd.rps([1.0, 0.0, 0.0], 0) == 0.0, "perfect forecast has zero RPS")
    w = fd.wilcoxon([0.0] * 10, [0.1 * (i + 1) for i in range(10)])
    check(w["p_value"] < 0.01 and w["n_used"] == 10, "Wilcoxon detects a uniform increase")

    data = fd.planted_bias(600, 4)
    n = len(data["y"])
    attrs = [fd.Sample.column([float(v) for v in data[k]]) for k in ("a", "b")]
    cut = n // 2
    head = [fd.Sample.column([float(v) for v in data[k][:cut]]) for k in ("a", "b")]
    tail = [fd.Sample.column([float(v) for v in data[k][cut:]]) for k in ("a", "b")]
    model = fd.Model.train(
        data["x"][:cut], data["y"][:cut], head,
        data["x"][cut:], data["y"][cut:], tail,
        regulariser="ccdcov", lam=4.0, hidden_layers=1, width=8, max_epochs=5, seed=1,
    )
    pred = model.predict(data["x"])
    check(len(pred) == n and all(0.0 < p < 1.0 for p in pred), "predictions are probabilities")
    again = fd.Model.from_json(model.to_json()).predict(data["x"])
    check(again == pred, "JSON round trip preserves predictions")
    check(fd.ccdcov(fd.Sample.column(pred), attrs) == fd.ccdcov(fd.Sample.column(again), attrs), "metrics reproducible")

    try:
        fd.Sample([[1.0, 2.0], [3.0]])
    except fd.FairdcovError:
        print("ok  ragged rows raise FairdcovError")
    else:
        raise AssertionError("ragged rows accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
