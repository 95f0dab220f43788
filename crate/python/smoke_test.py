"""Smoke test for the `smld` Python extension.

Build the extension first, then run this script:

    cargo build -p smld-python
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path


def load_module():
    root = Path(__file__).resolve().parent.parent
    candidates = sorted(root.glob("target/*/libsmld.so"))
    if not candidates:
        sys.exit("build the extension first: cargo build -p smld-python")
    tmp = Path(tempfile.mkdtemp(prefix="smld_py_"))
    shutil.copy(candidates[-1], tmp / "smld.so")
    sys.path.insert(0, str(tmp))
    import smld

    return smld


def approx(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    smld = load_module()

    # Mirror map round trip on the PD cone (vech coordinates).
    m = smld.MirrorMap.log_det_pd(2)
    theta = [1.5, 0.25, 1.2]
    dual = m.grad_phi(theta)
    back = m.grad_phi_star(dual)
    assert m.dim() == 3
    assert m.dual_valid(dual)
    for a, b in zip(theta, back):
        approx(a, b, 1e-10)

    # Metric matrix is symmetric positive definite at an interior point.
    a = smld.MirrorMap.log_barrier_positive().metric_matrix([-0.5])
    assert a[0][0] > 0

    # Polya-Gamma sample mean matches the closed form.
    c = 1.0
    mean = smld.polya_gamma_mean(1, c)
    draws = smld.polya_gamma_sample(1, c, 200_000, 7)
    approx(sum(draws) / len(draws), mean, 0.01 * mean)
    approx(mean, math.tanh(c / 2) / (2 * c), 1e-12)

    # Lyapunov solve: scalar case x * v / j = gamma.
    x = smld.lyapunov_solve([[2.0]], [[3.0]], [[6.0]])
    approx(x[0][0], 4.0, 1e-10)

    # Short constrained chain on the variance toy stays in the domain and
    # lands near the quadrature posterior mean.
    n, s = 500, 5
    eps = smld.step_size_rule(n, s)
    out = smld.fit_variance_toy(
        n, 1.0, 11, eps, s, 200_000, 12, sigma_sq_coordinates=True, store_stride=100
    )
    assert out["status"] == "completed", out
    q_mean, q_var = smld.variance_toy_oracle(n, 1.0, 11)
    approx(out["primal_mean"][0], q_mean, 4 * math.sqrt(q_var))

    # Covariance toy with variance correction: corrected dual variance moves
    # toward the raw estimate minus the step-size inflation.
    res = smld.fit_covariance_toy(
        800, [[1.0, 0.2], [0.2, 1.0]], 3.0, [[1.0, 0.0], [0.0, 1.0]],
        21, smld.step_size_rule(800, 5), 5, 100_000, 22,
    )
    assert res["status"] == "completed", res
    assert res["lyapunov_residual"] < 1e-8
    for j in range(3):
        assert 0 < res["dual_cov_corrected"][j][j] < res["dual_cov_raw"][j][j]

    print("smoke test passed")


if __name__ == "__main__":
    main()
