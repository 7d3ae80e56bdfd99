"""Smoke test for the qtomo_py extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
then run:
    python python/smoke.py
"""

import json
import os
import sys
import tempfile

import qtomo_py

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    return cond


def main():
    results = []

    bme = json.loads(qtomo_py.single_qubit([7, 3, 7, 3, 0, 10]))
    b = bme["bloch"]
    norm = (b["x"] ** 2 + b["y"] ** 2 + b["z"] ** 2) ** 0.5
    results.append(check(bme["method"] == "bme" and norm < 1, f"single-qubit bme |r| = {norm:.4f}"))

    lie = json.loads(qtomo_py.single_qubit([7, 3, 7, 3, 0, 10], method="lie"))
    results.append(check(lie["physical"] is False, "unphysical linear inversion is flagged"))

    try:
        qtomo_py.single_qubit([1, 2, 3])
        results.append(check(False, "bad counts raise ValueError"))
    except ValueError as e:
        results.append(check(json.loads(str(e))["error"] == "invalid_input", "bad counts raise ValueError"))

    data = qtomo_py.simulate(pairs=5000, seed=4)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "data.json")
        with open(path, "w") as f:
            f.write(data)
        mle = json.loads(qtomo_py.estimate(path, method="mle", target_state="psi-plus"))
    fid = mle["fidelity"]["mean"]
    results.append(check(fid > 0.95, f"simulated psi+ recovered by mle, fidelity {fid:.4f}"))

    single = json.loads(qtomo_py.estimate(os.path.join(ROOT, "data", "single_basis.json"), samples=500, seed=1))
    results.append(check(single["model"] == "simplex", "single-basis file uses the simplex model"))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
