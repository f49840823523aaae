"""Monte Carlo estimation of wavefunction-ensemble averages [m^2]_beta for the
mean-field two-level model, via the Gaussian-sphere representation.

A normalized collective wavefunction is a point phi on the complex unit sphere
in C^{N+1}, phi_n the amplitude on n "down" spins (spin values +-1).  The
ensemble weight is exp(-f) with

    f(phi) = N beta { 1 - m(phi)^2 + (omega - 1) D(phi) },     omega = N w,

where m = (1/N) sum |phi_n|^2 (N - 2n) and D is the matching dispersion.
Uniform sphere points are drawn by normalizing i.i.d. standard complex
Gaussians; self-normalized importance sampling is the default estimator and a
random-walk Metropolis sampler on the sphere is the large-(N beta) fallback
(importance weights degenerate there, which the effective sample size
detects).  Exact quadrature oracles cover N <= 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

NORM_TOL = 1e-12
DEGENERATE_ESS = 50.0


@dataclass(frozen=True)
class EnsembleParams:
    """Sampling parameters for one ensemble estimate."""

    n_spins: int
    beta: float
    omega: float = 0.0
    sampler: str = "importance"
    n_samples: int = 20000
    seed: int = 0
    step_size: float | None = None      # metropolis proposal scale; None -> pilot-tuned

    def __post_init__(self):
        if self.n_spins < 1:
            raise ValueError("n_spins must be >= 1")
        if self.beta < 0 or self.omega < 0:
            raise ValueError("beta and omega must be >= 0")
        if self.n_samples < 100:
            raise ValueError("n_samples must be >= 100")
        if self.sampler not in ("importance", "metropolis"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


@dataclass
class EnsembleEstimate:
    """Estimate of [m^2]_beta with its sampling diagnostics."""

    m2_mean: float
    std_error: float
    effective_sample_size: float
    n_samples: int
    sampler: str
    acceptance_rate: float | None = None     # metropolis only
    max_weight_share: float | None = None    # importance only
    degenerate_weights: bool = False
    weight_frac_above: float | None = None   # weight carried by {m^2 > eps}


def sample_phi(n_spins: int, rng) -> np.ndarray:
    """One draw of N+1 complex coordinates with i.i.d. standard normal parts.

    Only the direction phi / ||phi|| is consumed downstream; normalizing
    these draws gives the uniform measure on the complex unit sphere.
    """
    return rng.standard_normal(n_spins + 1) + 1j * rng.standard_normal(n_spins + 1)


def _spin_weights(n_spins: int) -> np.ndarray:
    return (n_spins - 2.0 * np.arange(n_spins + 1)) / n_spins


def _m_and_d_from_u(u, n_spins):
    """(m, D) from squared-amplitude rows u (each row sums to 1)."""
    a = _spin_weights(n_spins)
    m = u @ a
    q = u @ (a * a)
    return m, q - m**2


def m_and_D(phi_normalized: np.ndarray, n_spins: int):
    """Magnetization and dispersion functionals of a normalized phi.

    Also cross-checks the quadratic-energy decomposition
    -(1/N) sum |phi_n|^2 (N-2n)^2 = -N (m^2 + D) on every call.
    """
    phi = np.asarray(phi_normalized, dtype=complex)
    if phi.shape != (n_spins + 1,):
        raise ValueError(f"phi must have {n_spins + 1} components")
    u = np.abs(phi) ** 2
    total = float(u.sum())
    if abs(total - 1.0) > NORM_TOL:
        raise ValueError(f"phi must be normalized, got ||phi||^2 = {total!r}")
    m, d = _m_and_d_from_u(u[None, :], n_spins)
    m, d = float(m[0]), float(d[0])
    direct = -float(u @ (n_spins - 2.0 * np.arange(n_spins + 1)) ** 2) / n_spins
    if abs(direct - (-n_spins * (m**2 + d))) > 1e-12 * max(1.0, abs(direct)):
        raise AssertionError("quadratic-energy decomposition violated")
    return m, d


def f_value(phi_normalized: np.ndarray, params: EnsembleParams) -> float:
    """Ensemble exponent f = N beta {1 - m^2 + (omega - 1) D}; >= 0 when omega >= 1."""
    m, d = m_and_D(phi_normalized, params.n_spins)
    f = params.n_spins * params.beta * (1.0 - m**2 + (params.omega - 1.0) * d)
    if params.omega >= 1.0 and f < -1e-12:
        raise AssertionError(f"f = {f} < 0 with omega >= 1")
    return f


def _f_from_u(u, params):
    m, d = _m_and_d_from_u(u, params.n_spins)
    msq = m**2
    return params.n_spins * params.beta * (1.0 - msq + (params.omega - 1.0) * d), msq


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _importance_estimate(params: EnsembleParams, eps) -> EnsembleEstimate:
    rng = np.random.default_rng(params.seed)
    n = params.n_samples
    draws = rng.standard_normal((n, params.n_spins + 1)) + 1j * rng.standard_normal(
        (n, params.n_spins + 1)
    )
    u = np.abs(draws) ** 2
    u /= u.sum(axis=1, keepdims=True)
    f, msq = _f_from_u(u, params)
    logw = -(f - f.min())
    w = np.exp(logw)
    w /= w.sum()
    mean = float(w @ msq)
    # delta-method standard error of the self-normalized estimator
    se = math.sqrt(float(np.sum(w**2 * (msq - mean) ** 2)))
    ess = 1.0 / float(np.sum(w**2))
    frac = float(w[msq > eps].sum()) if eps is not None else None
    est = EnsembleEstimate(
        m2_mean=mean,
        std_error=se,
        effective_sample_size=ess,
        n_samples=n,
        sampler="importance",
        max_weight_share=float(w.max()),
        degenerate_weights=ess < DEGENERATE_ESS,
        weight_frac_above=frac,
    )
    if est.degenerate_weights:
        warnings.warn(
            f"importance weights degenerate (ESS = {ess:.1f} < {DEGENERATE_ESS:g}); "
            "prefer the metropolis sampler at large N*beta",
            RuntimeWarning,
            stacklevel=3,
        )
    return est


def _f_of_phi_rows(phi, params):
    u = np.abs(phi) ** 2
    u /= u.sum()
    f, msq = _f_from_u(u[None, :], params)
    return float(f[0]), float(msq[0])


def _pilot_step(params: EnsembleParams, rng, start, f_start, target=0.3, rounds=12, length=120):
    """Deterministic pilot adaptation of the proposal scale toward ``target``."""
    step = 1.0 / math.sqrt(params.n_spins + 1.0)
    phi, f_cur = start, f_start
    for _ in range(rounds):
        accepted = 0
        for _ in range(length):
            prop = phi + step * (
                rng.standard_normal(phi.size) + 1j * rng.standard_normal(phi.size)
            )
            prop /= np.linalg.norm(prop)
            f_prop, _ = _f_of_phi_rows(prop, params)
            if rng.random() < math.exp(min(0.0, f_cur - f_prop)):
                phi, f_cur = prop, f_prop
                accepted += 1
        rate = accepted / length
        step *= math.exp(rate - target)
    return step, phi, f_cur


def _metropolis_estimate(params: EnsembleParams, eps) -> EnsembleEstimate:
    rng = np.random.default_rng(params.seed)
    phi = sample_phi(params.n_spins, rng)
    phi /= np.linalg.norm(phi)
    f_cur, msq_cur = _f_of_phi_rows(phi, params)
    if params.step_size is None:
        step, phi, f_cur = _pilot_step(params, rng, phi, f_cur)
        msq_cur = _f_of_phi_rows(phi, params)[1]
    else:
        step = params.step_size
    n = params.n_samples
    samples = np.empty(n)
    accepted = 0
    for i in range(n):
        prop = phi + step * (
            rng.standard_normal(phi.size) + 1j * rng.standard_normal(phi.size)
        )
        prop /= np.linalg.norm(prop)
        f_prop, msq_prop = _f_of_phi_rows(prop, params)
        if rng.random() < math.exp(min(0.0, f_cur - f_prop)):
            phi, f_cur, msq_cur = prop, f_prop, msq_prop
            accepted += 1
        samples[i] = msq_cur
    burn = n // 10
    kept = samples[burn:]
    mean = float(kept.mean())
    # batch-means standard error
    n_batches = max(int(math.sqrt(kept.size) / 2), 8)
    usable = (kept.size // n_batches) * n_batches
    batches = kept[:usable].reshape(n_batches, -1).mean(axis=1)
    se = float(batches.std(ddof=1) / math.sqrt(n_batches))
    var = float(kept.var(ddof=1))
    ess = min(float(kept.size), var / se**2) if se > 0 else float(kept.size)
    frac = float(np.mean(kept > eps)) if eps is not None else None
    return EnsembleEstimate(
        m2_mean=mean,
        std_error=se,
        effective_sample_size=ess,
        n_samples=n,
        sampler="metropolis",
        acceptance_rate=accepted / n,
        weight_frac_above=frac,
    )


def estimate_m2(params: EnsembleParams, eps: float | None = None) -> EnsembleEstimate:
    """Monte Carlo estimate of [m^2]_beta with standard error and diagnostics.

    ``eps`` additionally reports the posterior weight carried by samples with
    m^2 above it (the concentration diagnostic).
    """
    if params.sampler == "importance":
        return _importance_estimate(params, eps)
    return _metropolis_estimate(params, eps)


# ---------------------------------------------------------------------------
# exact small-N oracles
# ---------------------------------------------------------------------------

def exact_m2_small_n(n_spins: int, beta: float, omega: float) -> float:
    """Deterministic quadrature for [m^2]_beta at N = 1 or 2.

    Phases integrate out, leaving the uniform measure on the simplex of
    squared amplitudes; the remaining one- or two-dimensional integrals are
    evaluated to absolute accuracy ~1e-8 or better.
    """
    if n_spins == 1:
        # m = 2u - 1 ~ t uniform on [-1, 1]; f = beta omega (1 - t^2)
        c = beta * omega

        def weight(t):
            return math.exp(c * (t**2 - 1.0))

        zed, _ = integrate.quad(weight, -1.0, 1.0, epsabs=1e-12, epsrel=1e-12)
        num, _ = integrate.quad(lambda t: t * t * weight(t), -1.0, 1.0,
                                epsabs=1e-12, epsrel=1e-12)
        return num / zed
    if n_spins == 2:
        # simplex coordinates (u0, u2): m = u0 - u2, D = u0 + u2 - m^2
        def f_exp(u0, u2):
            m = u0 - u2
            d = u0 + u2 - m * m
            return math.exp(-2.0 * beta * (1.0 - m * m + (omega - 1.0) * d))

        zed, _ = integrate.dblquad(
            f_exp, 0.0, 1.0, 0.0, lambda u0: 1.0 - u0, epsabs=1e-10
        )
        num, _ = integrate.dblquad(
            lambda u0, u2: (u0 - u2) ** 2 * f_exp(u0, u2),
            0.0, 1.0, 0.0, lambda u0: 1.0 - u0, epsabs=1e-10,
        )
        return num / zed
    raise ValueError("exact quadrature oracle covers N = 1 and 2 only")


# ---------------------------------------------------------------------------
# magnetization curves
# ---------------------------------------------------------------------------

def magnetization_curve(
    n_list,
    beta_grid,
    omega_list,
    n_samples: int = 20000,
    seed: int = 0,
    eps: float = 0.5,
    sampler: str = "auto",
    fallback_ess: float = 100.0,
) -> list:
    """[m^2] with errors per (N, beta, omega) plus concentration diagnostics.

    ``sampler="auto"`` uses importance sampling and falls back to metropolis
    whenever the importance effective sample size drops below
    ``fallback_ess``.  Each cell draws from its own deterministic seed stream.
    """
    rows = []
    seeds = np.random.SeedSequence(seed).generate_state(
        len(n_list) * len(beta_grid) * len(omega_list) * 2, dtype=np.uint64
    )
    j = 0
    for n in n_list:
        for omega in omega_list:
            for beta in beta_grid:
                cell_seed, fb_seed = int(seeds[j]), int(seeds[j + 1])
                j += 2
                if sampler in ("importance", "auto"):
                    params = EnsembleParams(
                        n_spins=int(n), beta=float(beta), omega=float(omega),
                        sampler="importance", n_samples=n_samples, seed=cell_seed,
                    )
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        est = estimate_m2(params, eps=eps)
                    if sampler == "auto" and est.effective_sample_size < fallback_ess:
                        params = EnsembleParams(
                            n_spins=int(n), beta=float(beta), omega=float(omega),
                            sampler="metropolis", n_samples=n_samples, seed=fb_seed,
                        )
                        est = estimate_m2(params, eps=eps)
                else:
                    params = EnsembleParams(
                        n_spins=int(n), beta=float(beta), omega=float(omega),
                        sampler="metropolis", n_samples=n_samples, seed=cell_seed,
                    )
                    est = estimate_m2(params, eps=eps)
                rows.append(
                    {
                        "N": int(n),
                        "beta": float(beta),
                        "omega": float(omega),
                        "sampler": est.sampler,
                        "n_samples": est.n_samples,
                        "m2": est.m2_mean,
                        "std_error": est.std_error,
                        "ess": est.effective_sample_size,
                        "weight_frac_above_eps": est.weight_frac_above,
                    }
                )
    return rows
