"""Smoke test for the sparse_arx_py extension.

Build first:  cargo build --release -p sparse-arx-py
Then run:     python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import json
import pathlib
import sys


def load():
    try:
        import sparse_arx_py

        return sparse_arx_py
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for profile in ("release", "debug"):
        lib = root / "target" / profile / "libsparse_arx_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("sparse_arx_py", str(lib))
            spec = importlib.util.spec_from_file_location("sparse_arx_py", lib, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("sparse_arx_py not found; run: cargo build --release -p sparse-arx-py")


def main():
    sa = load()

    y, u, truth = sa.simulate(nodes=4, inputs=1, order=2, samples=200, noise_var=0.01, seed=3)
    assert len(y) == 200 and len(y[0]) == 4 and len(u[0]) == 1
    truth_net = json.loads(truth)
    assert truth_net["p"] == 4

    result = json.loads(sa.identify(y, u, k=3, seed=1))
    assert result["schema"] == 1
    assert result["solver"] == "cccp"
    assert len(result["nodes"]) == 4
    assert all(n["status"] == "ok" for n in result["nodes"])
    err = sa.coefficient_error(json.dumps(result["network"]), truth)
    print(f"identify: coefficient error {err:.3f}")
    assert err < 1.0

    em = json.loads(sa.identify(y, u, k=3, solver="em", lam=0.01))
    assert em["solver"] == "em"

    report, tables = sa.benchmark(trials=1, seed=5, modes=["combined"])
    assert json.loads(report)["methods"][0]["label"] == "Our method"
    assert "| Our method |" in tables

    for bad in (lambda: sa.identify(y, u, solver="nope"), lambda: sa.identify([[1.0], [1.0, 2.0]])):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
