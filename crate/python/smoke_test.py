"""Smoke test for the fairreg Python extension.

Build and install the extension first, for example:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/fairreg-*.whl
"""

import json
import math

import fairreg


def main():
    params = fairreg.ModelParams.random_valid(4, 3, b_bound=2.0, u_bound=1.0, seed=7)
    assert params.violations() == [], params.violations()
    assert json.loads(params.to_json())["M"] == 3

    oracle = fairreg.fair_oracle(params)
    assert fairreg.excess_risk(oracle, params) < 1e-20
    scores = fairreg.unfairness(oracle, params)
    assert scores["w2_max"] < 1e-10 and scores["kol_max"] < 1e-10

    data = fairreg.sample_dataset(params, 20000, seed=1)
    assert len(data) == 20000 and sum(data.group_counts) == 20000

    f, estimates = fairreg.fit(data, seed=2)
    risk = fairreg.excess_risk(f, params)
    mc, se = fairreg.mc_excess_risk(f, params, 200000, seed=3)
    assert risk < 0.05, risk
    assert abs(mc - risk) < 5 * se + 1e-12, (mc, risk, se)
    assert len(json.loads(estimates)["p_hat"]) == 3
    x = data.x[0]
    assert math.isfinite(f.predict(x, data.s[0]))

    assert abs(fairreg.fano_value(3.0, 4, 0.0) - 1.5) < 1e-12
    slope, _, r2 = fairreg.fit_slope([(n, 1.0 / n) for n in (1.0, 2.0, 4.0)])
    assert abs(slope + 1.0) < 1e-10 and abs(r2 - 1.0) < 1e-12

    try:
        fairreg.fano_value(1.0, 1, 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("K < 2 must raise")

    print(f"smoke test passed: risk {risk:.3e}, mc {mc:.3e} +- {se:.1e}")


if __name__ == "__main__":
    main()
