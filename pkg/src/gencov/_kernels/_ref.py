"""Pure-numpy reference implementations of the hot kernels.

These mirror the signatures of the compiled versions in ``_core`` and are the
fallback selected when the extension is unavailable (or when
``GENCOV_PURE_PYTHON=1``).  They are also the ground truth for the parity
tests, so keep the arithmetic order deliberately simple.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

__all__ = ["mar_filter", "dar_residual_filter", "dar_sim_path", "gamma_stack"]


def mar_filter(eps: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Solve the two-sided autoregression driven by ``eps``.

    Backward pass: u_t = eps_t + sum_j psi_j u_{t+j} (zero beyond the grid);
    forward pass:  y_t = u_t + sum_i phi_i y_{t-i} (zero before the grid).
    """
    x = np.asarray(eps, dtype=float)
    if psi.size:
        a = np.concatenate(([1.0], -psi))
        x = lfilter([1.0], a, x[::-1])[::-1]
    if phi.size:
        a = np.concatenate(([1.0], -phi))
        x = lfilter([1.0], a, x)
    return np.ascontiguousarray(x, dtype=float)


def dar_residual_filter(
    y: np.ndarray, phi: np.ndarray, omega: float, alpha: np.ndarray
) -> np.ndarray:
    """Standardized innovations of a conditionally heteroskedastic AR path.

    eta_t = (y_t - sum_i phi_i y_{t-i}) / sqrt(omega + sum_j alpha_j y_{t-j}^2)
    for t = m..T-1 with m = max(len(phi), len(alpha)).
    """
    y = np.asarray(y, dtype=float)
    p, q = phi.size, alpha.size
    m = max(p, q)
    t = y.size
    mean = np.zeros(t - m)
    for i in range(1, p + 1):
        mean += phi[i - 1] * y[m - i : t - i]
    var = np.full(t - m, float(omega))
    for j in range(1, q + 1):
        var += alpha[j - 1] * y[m - j : t - j] ** 2
    return (y[m:] - mean) / np.sqrt(var)


def dar_sim_path(
    eta: np.ndarray, phi: np.ndarray, omega: float, alpha: np.ndarray
) -> np.ndarray:
    """Forward recursion y_t = sum phi_i y_{t-i} + eta_t sqrt(omega + sum alpha_j y_{t-j}^2).

    Initial values (t < max(p, q)) are zero; the caller discards a burn-in
    prefix long enough to wash them out.
    """
    eta = np.asarray(eta, dtype=float)
    p, q = phi.size, alpha.size
    m = max(p, q)
    n = eta.size
    y = np.zeros(n)
    for t in range(m, n):
        mean = 0.0
        for i in range(p):
            mean += phi[i] * y[t - 1 - i]
        var = float(omega)
        for j in range(q):
            var += alpha[j] * y[t - 1 - j] * y[t - 1 - j]
        y[t] = mean + eta[t] * np.sqrt(var)
    return y


def gamma_stack(panel: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocovariance matrices of ``panel`` at lags 0..max_lag.

    ``panel`` is T x K (already demeaned).  Gamma(h)[i, j] =
    (1/T) sum_{t=h..T-1} panel[t, i] * panel[t-h, j]; the denominator is the
    full panel length T at every lag.
    """
    panel = np.asarray(panel, dtype=float)
    t, k = panel.shape
    if max_lag >= t:
        raise ValueError(f"max_lag {max_lag} must be below the panel length {t}")
    out = np.empty((max_lag + 1, k, k))
    out[0] = panel.T @ panel / t
    for h in range(1, max_lag + 1):
        out[h] = panel[h:].T @ panel[:-h] / t
    return out
