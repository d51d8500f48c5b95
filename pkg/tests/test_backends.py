"""Parity between the compiled kernels and the pure-NumPy fallback.

Each backend is internally deterministic; across backends results agree to
floating-point rounding (summation orders differ), so comparisons use tight
tolerances rather than bit equality.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from seedsweep import _kernels_py as pyk

ck = pytest.importorskip("seedsweep._kernels")


def _problem(rng, k=12, n=80):
    D = rng.normal(size=(n, k))
    y = rng.normal(size=n)
    gram = np.ascontiguousarray(D.T @ D / n)
    xty = np.ascontiguousarray(D.T @ y / n)
    return gram, xty


def test_backend_names():
    assert pyk.BACKEND_NAME == "python"
    assert ck.BACKEND_NAME == "compiled"


def test_lasso_cd_parity():
    rng = np.random.default_rng(0)
    for trial in range(5):
        gram, xty = _problem(rng)
        pen = np.ones(gram.shape[0], dtype=np.uint8)
        pen[:2] = 0
        beta_a = np.zeros(gram.shape[0])
        beta_b = np.zeros(gram.shape[0])
        sweeps_a, conv_a = pyk.lasso_cd(gram, xty, beta_a, pen, 0.05, 1e-7, 100000)
        sweeps_b, conv_b = ck.lasso_cd(gram, xty, beta_b, pen, 0.05, 1e-7, 100000)
        assert conv_a and conv_b
        assert np.max(np.abs(beta_a - beta_b)) < 1e-10


def test_group_cd_parity():
    rng = np.random.default_rng(1)
    gram, xty = _problem(rng, k=10)
    free = np.array([0, 1], dtype=np.int64)
    idx = np.array([2, 3, 4, 5, 6, 7, 8, 9], dtype=np.int64)
    ptr = np.array([0, 4, 8], dtype=np.int64)
    wts = np.array([2.0, 2.0])
    vals, vecs = [], []
    for g in range(2):
        block = idx[ptr[g] : ptr[g + 1]]
        A = gram[np.ix_(block, block)]
        d, V = np.linalg.eigh(A)
        vals.append(np.clip(d, 0, None))
        vecs.append(np.ascontiguousarray(V).ravel())
    eig_val = np.concatenate(vals)
    eig_vec = np.concatenate(vecs)
    beta_a = np.zeros(10)
    beta_b = np.zeros(10)
    args = (free, ptr, idx, wts, eig_val, eig_vec, 0.03, 1e-7, 100000)
    _, conv_a = pyk.group_cd(gram, xty, beta_a, *args)
    _, conv_b = ck.group_cd(gram, xty, beta_b, *args)
    assert conv_a and conv_b
    assert np.max(np.abs(beta_a - beta_b)) < 1e-8


def test_exp_neg_axpy_lower_parity():
    rng = np.random.default_rng(2)
    n = 40
    S = np.abs(rng.normal(size=(n, n)))
    S = S + S.T
    D = np.abs(rng.normal(size=(n, n)))
    D = D + D.T
    out_a = np.full((n, n), np.nan)
    out_b = np.full((n, n), np.nan)
    pyk.exp_neg_axpy_lower(S, D, 0.37, out_a)
    ck.exp_neg_axpy_lower(S, D, 0.37, out_b)
    tri = np.tril_indices(n)
    np.testing.assert_allclose(out_a[tri], out_b[tri], rtol=1e-14, atol=0)


def test_shift_chol_parity_and_correctness():
    rng = np.random.default_rng(3)
    n = 30
    A = rng.normal(size=(n, n))
    K = np.exp(-np.abs(A + A.T))  # symmetric, unit diagonal after exp of 0... keep generic
    np.fill_diagonal(K, 1.0)
    K = K @ K.T / n + np.eye(n)  # definitely PSD
    V_a = np.empty((n, n))
    V_b = np.empty((n, n))
    info_a, logdet_a = pyk.shift_chol_logdet_lower(K, 0.8, V_a)
    info_b, logdet_b = ck.shift_chol_logdet_lower(K, 0.8, V_b)
    assert info_a == 0 and info_b == 0
    expected = np.linalg.slogdet(np.eye(n) + 0.8 * K)[1]
    assert abs(logdet_a - expected) < 1e-10
    assert abs(logdet_b - expected) < 1e-10
    tri = np.tril_indices(n)
    np.testing.assert_allclose(V_a[tri], V_b[tri], rtol=1e-9, atol=1e-12)
    # lower triangle is the actual Cholesky factor
    L = np.tril(V_a)
    np.testing.assert_allclose(L @ L.T, np.eye(n) + 0.8 * K, rtol=1e-12, atol=1e-12)


def test_shift_chol_reports_non_pd():
    n = 5
    K = -np.eye(n) * 10.0
    V = np.empty((n, n))
    info, _ = pyk.shift_chol_logdet_lower(K, 1.0, V)
    assert info != 0
    info_c, _ = ck.shift_chol_logdet_lower(K, 1.0, V)
    assert info_c != 0


def test_chol_boost_adds_jitter():
    n = 4
    K = np.eye(n)
    V = np.empty((n, n))
    _, logdet_plain = pyk.shift_chol_logdet_lower(K, 1.0, V)
    _, logdet_boost = pyk.shift_chol_logdet_lower(K, 1.0, V, 0.5)
    assert logdet_boost > logdet_plain


def test_forced_python_backend_matches_compiled_fit():
    """A subprocess with SEEDSWEEP_BACKEND=python reproduces the same lasso fit."""
    script = (
        "import numpy as np\n"
        "import seedsweep as ss\n"
        "from seedsweep.synth import SyntheticSpec, generate_synthetic\n"
        "d = generate_synthetic(SyntheticSpec(n=80, p=5, truth='linear',"
        " beta=(0.5, 0, 0, -0.4, 0), seed=3))\n"
        "fit = ss.lasso_fit(d, 0.05)\n"
        "print(ss.active_backend())\n"
        "print(repr(fit.beta.tolist()))\n"
    )

    def run(backend):
        env = dict(os.environ, SEEDSWEEP_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, "-c", script], capture_output=True, text=True, env=env
        )
        assert out.returncode == 0, out.stderr
        name, beta = out.stdout.strip().split("\n")
        return name, np.array(eval(beta))

    name_py, beta_py = run("python")
    name_c, beta_c = run("")
    assert name_py == "python" and name_c == "compiled"
    assert np.max(np.abs(beta_py - beta_c)) < 1e-9
