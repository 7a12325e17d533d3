"""Photon-number statistics of the simulated light sources.

Three source kinds are supported:

* ``coherent`` -- Poissonian photon numbers (pulsed laser well above
  threshold).
* ``multithermal`` -- one arm of a multi-mode thermal field: the sum of
  ``modes`` equally populated thermal (geometric) mode occupations, i.e. a
  negative binomial law.
* ``twin_beam`` -- a multi-mode twin beam: both arms share the same total
  mode occupation event by event, so the two photon numbers are perfectly
  correlated before detection losses.

``mean`` always refers to the mean photon number per arm at the source.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

_KINDS = ("coherent", "multithermal", "twin_beam")


@dataclass(frozen=True)
class LightStateSpec:
    """Declarative description of a light source.

    Parameters
    ----------
    kind : str
        One of ``coherent``, ``multithermal``, ``twin_beam``.
    mean : float
        Mean photon number per arm, >= 0.
    modes : int
        Number of equally populated modes, >= 1. Ignored for ``coherent``.
    """

    kind: str
    mean: float
    modes: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}, expected one of {_KINDS}")
        if not np.isfinite(self.mean) or self.mean < 0:
            raise ValueError(f"mean must be finite and >= 0, got {self.mean}")
        if int(self.modes) != self.modes or self.modes < 1:
            raise ValueError(f"modes must be an integer >= 1, got {self.modes}")

    @property
    def two_arm(self) -> bool:
        return self.kind == "twin_beam"


@dataclass(frozen=True)
class PhotonEvent:
    """Photon numbers of one optical event (second arm absent for 1-arm sources)."""

    n1: int
    n2: int | None = None


def _check_mean(mean: float) -> float:
    mean = float(mean)
    if not np.isfinite(mean) or mean < 0:
        raise ValueError(f"mean must be finite and >= 0, got {mean}")
    return mean


def _check_modes(modes: int) -> int:
    if int(modes) != modes or modes < 1:
        raise ValueError(f"modes must be an integer >= 1, got {modes}")
    return int(modes)


def pmf_poisson(mean: float, n) -> np.ndarray | float:
    """Poisson probability of counting n photons at the given mean.

    Evaluated in log space so large n and large means stay finite.
    """
    mean = _check_mean(mean)
    n_arr = np.asarray(n)
    if np.any(n_arr < 0) or not np.issubdtype(n_arr.dtype, np.integer):
        n_arr = np.asarray(n, dtype=np.int64)
        if np.any(n_arr < 0):
            raise ValueError("n must be >= 0")
    if mean == 0.0:
        out = np.where(n_arr == 0, 1.0, 0.0)
        return float(out) if np.isscalar(n) else out
    logp = n_arr * np.log(mean) - mean - gammaln(n_arr + 1.0)
    out = np.exp(logp)
    return float(out) if np.isscalar(n) else out


def pmf_multithermal(mean: float, modes: int, n) -> np.ndarray | float:
    """Probability of n photons in a `modes`-mode thermal field of given total mean.

    The law is the `modes`-fold convolution of a geometric distribution with
    per-mode mean ``mean / modes``; evaluated in closed form in log space.
    """
    mean = _check_mean(mean)
    modes = _check_modes(modes)
    n_arr = np.asarray(n, dtype=np.int64)
    if np.any(n_arr < 0):
        raise ValueError("n must be >= 0")
    if mean == 0.0:
        out = np.where(n_arr == 0, 1.0, 0.0)
        return float(out) if np.isscalar(n) else out
    logp = (
        gammaln(n_arr + modes)
        - gammaln(n_arr + 1.0)
        - gammaln(modes)
        - modes * np.log1p(mean / modes)
        + n_arr * (np.log(mean) - np.log(mean + modes))
    )
    out = np.exp(logp)
    return float(out) if np.isscalar(n) else out


def sample_coherent(rng: np.random.Generator, mean: float, size: int | None = None):
    """Draw photon numbers of a coherent state (Poisson)."""
    mean = _check_mean(mean)
    return rng.poisson(mean, size=size)


def sample_multithermal(rng: np.random.Generator, mean: float, modes: int,
                        size: int | None = None):
    """Draw photon numbers of a multi-mode thermal state.

    The sum of `modes` iid geometric mode occupations is drawn as a single
    negative binomial variate with the same law.
    """
    mean = _check_mean(mean)
    modes = _check_modes(modes)
    if mean == 0.0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    p = modes / (modes + mean)
    return rng.negative_binomial(modes, p, size=size)


def sample_twb(rng: np.random.Generator, mean: float, modes: int,
               size: int | None = None):
    """Draw both arms of a multi-mode twin beam.

    Returns a (n1, n2) pair; the arms are exact copies because every photon
    in one arm has a partner in the other.
    """
    n = sample_multithermal(rng, mean, modes, size=size)
    if size is None:
        return n, n
    return n, n.copy()


def sample_photons(rng: np.random.Generator, spec: LightStateSpec, size: int):
    """Batch-draw a source described by a LightStateSpec.

    Returns
    -------
    (n1, n2) : tuple of int64 arrays; n2 is None for single-arm sources.
    """
    if spec.kind == "coherent":
        return sample_coherent(rng, spec.mean, size=size), None
    if spec.kind == "multithermal":
        return sample_multithermal(rng, spec.mean, spec.modes, size=size), None
    n1, n2 = sample_twb(rng, spec.mean, spec.modes, size=size)
    return n1, n2


def fano_theory(mean: float, modes: int) -> float:
    """Fano factor of a multi-mode thermal / twin-beam arm: 1 + mean/modes."""
    mean = _check_mean(mean)
    modes = _check_modes(modes)
    return 1.0 + mean / modes


def _check_eta(eta: float, name: str = "eta") -> float:
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {eta}")
    return eta


def gamma_theory(m1: float, m2: float, mu1: float, mu2: float,
                 eta1: float, eta2: float) -> float:
    """Expected photon-number correlation of a detected twin beam.

    m1, m2 are the detected mean counts per arm, mu1, mu2 the mode numbers
    and eta1, eta2 the overall detection efficiencies.
    """
    m1, m2 = _check_mean(m1), _check_mean(m2)
    if mu1 <= 0 or mu2 <= 0:
        raise ValueError("mode numbers must be > 0")
    eta1, eta2 = _check_eta(eta1, "eta1"), _check_eta(eta2, "eta2")
    num = np.sqrt(m1 * m2 / (mu1 * mu2)) + np.sqrt(eta1 * eta2)
    den = np.sqrt((1.0 + m1 / mu1) * (1.0 + m2 / mu2))
    return float(num / den)


def r_theory(m1: float, m2: float, mu: float, eta1: float, eta2: float) -> float:
    """Expected noise-reduction factor of a detected twin beam.

    Balanced arms with equal efficiency eta give R = 1 - eta; imbalance adds
    the quadratic penalty term.
    """
    m1, m2 = _check_mean(m1), _check_mean(m2)
    if mu <= 0:
        raise ValueError("mode number must be > 0")
    eta1, eta2 = _check_eta(eta1, "eta1"), _check_eta(eta2, "eta2")
    s = m1 + m2
    if s <= 0:
        raise ValueError("m1 + m2 must be > 0")
    return float(1.0 - 2.0 * np.sqrt(eta1 * eta2) * np.sqrt(m1 * m2) / s
                 + (m1 - m2) ** 2 / (mu * s))
