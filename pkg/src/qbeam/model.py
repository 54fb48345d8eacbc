"""System primitives: channels, CSIT error, arrivals, goodput, queues.

Conventions used across the package:

* Channel and beam sets are complex arrays of shape (K, Nt); row k belongs
  to flow k.
* The beamforming gain of beam w at channel h is |h^H w|^2, i.e.
  ``abs(np.vdot(h, w))**2``.
* Rates, arrivals and queue backlogs are all expressed in spectral
  efficiency units per slot (bits normalised by tau*bw).  One arrival
  packet carries exactly ``rate`` of these units, so a queue of q holds
  q/rate packets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Default physical-layer numbers: 5 ms slots, 10 MHz band, 15 kbit packets.
# They only matter through the normalisation rate = packet_bits/(tau*bw).
DEFAULT_TAU = 5e-3
DEFAULT_BW = 1e7
DEFAULT_PACKET_BITS = 15e3

STREAM_NAMES = ("channel", "csit-noise", "arrivals", "policy")


@dataclass(frozen=True)
class SystemConfig:
    """Static cell parameters shared by all flows."""

    K: int
    Nt: int
    tau: float = DEFAULT_TAU
    bw: float = DEFAULT_BW
    packet_bits: float = DEFAULT_PACKET_BITS

    def __post_init__(self):
        if not (self.Nt >= self.K >= 1):
            raise ValueError(f"need Nt >= K >= 1, got K={self.K}, Nt={self.Nt}")
        if self.tau <= 0 or self.bw <= 0 or self.packet_bits <= 0:
            raise ValueError("tau, bw, packet_bits must be positive")


@dataclass(frozen=True)
class FlowParams:
    """Per-flow traffic and CSIT-quality parameters.

    Parameters
    ----------
    rate : float
        Scheduled spectral efficiency (bit/s/Hz).  Fixed per flow.
    lam : float
        Mean arrival rate in the same normalised units.  Stability of the
        single-flow fluid model requires lam < rate.
    gamma : float
        Delay price weighting average backlog against transmit power.
    eps : float
        CSIT error variance in (0, 1]; eps -> 0 is perfect CSIT.
    """

    rate: float
    lam: float
    gamma: float = 1.0
    eps: float = 0.1

    def __post_init__(self):
        if not 0 < self.lam < self.rate:
            raise ValueError(f"need 0 < lam < rate for stability, got lam={self.lam}, rate={self.rate}")
        if not 0 < self.eps <= 1:
            raise ValueError(f"eps must be in (0, 1], got {self.eps}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def a(self) -> float:
        """SINR threshold 2^rate - 1 of the scheduled rate."""
        return 2.0 ** self.rate - 1.0


def make_streams(seed) -> dict:
    """Spawn the independent named RNG substreams owned by one trial.

    Everything random in a trial draws from exactly one of these, so a
    (config, seed) pair pins the full sample path bit-for-bit.
    """
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAM_NAMES, children)}


def complex_normal(rng, shape, scale=1.0):
    """CN(0, scale^2) samples: independent Re/Im with variance scale^2/2."""
    return (scale / np.sqrt(2.0)) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channel(rng, cfg: SystemConfig):
    """Draw one (K, Nt) block-fading realization, unit variance per element."""
    return complex_normal(rng, (cfg.K, cfg.Nt))


def sample_joint_channel_csit(rng, cfg: SystemConfig, flows):
    """Draw (H, Hhat) jointly so the MMSE orthogonality property holds.

    Per flow k the estimate is drawn first with per-element variance
    1 - eps_k, and the true channel is h = hhat - sqrt(eps)*v with fresh
    unit-variance v.  This keeps Var(h) = 1 and E[(hhat - h) hhat^H] = 0
    simultaneously; sampling the error conditionally on h cannot do both.
    """
    if len(flows) != cfg.K:
        raise ValueError("flows length must equal cfg.K")
    eps = np.array([f.eps for f in flows])[:, None]
    hhat = complex_normal(rng, (cfg.K, cfg.Nt)) * np.sqrt(1.0 - eps)
    v = complex_normal(rng, (cfg.K, cfg.Nt))
    h = hhat - np.sqrt(eps) * v
    return h, hhat


def sample_channel_given_csit(rng, hhat_k, eps_k: float):
    """One draw of the true channel from its conditional law given hhat."""
    if not 0 <= eps_k <= 1:
        raise ValueError(f"eps must be in [0, 1], got {eps_k}")
    v = complex_normal(rng, np.shape(hhat_k))
    return hhat_k - np.sqrt(eps_k) * v


def beam_gains(H, beams):
    """Matrix of |h_k^H w_j|^2 for every flow/beam pair."""
    return np.abs(H.conj() @ beams.T) ** 2


def mutual_information(H, beams, k: int) -> float:
    """Achievable rate log2(1 + SINR_k), interference treated as noise."""
    g = beam_gains(H[k : k + 1], beams)[0]
    signal = g[k]
    interference = g.sum() - signal
    return float(np.log2(1.0 + signal / (1.0 + interference)))


def goodput(H, beams, flows):
    """Per-flow delivered rate: rate on success, zero on outage.

    A slot succeeds when the scheduled rate does not exceed the mutual
    information; the boundary rate == capacity counts as success.
    """
    g = beam_gains(H, beams)
    signal = np.diag(g)
    interference = g.sum(axis=1) - signal
    cap = np.log2(1.0 + signal / (1.0 + interference))
    rates = np.array([f.rate for f in flows])
    return np.where(rates <= cap, rates, 0.0)


def sample_arrivals(rng, flows):
    """Poisson packet arrivals, one packet = rate normalised units.

    Packet counts have mean lam/rate per slot, so the arrival mean in
    queue units is exactly lam.
    """
    lam = np.array([f.lam for f in flows])
    rates = np.array([f.rate for f in flows])
    counts = rng.poisson(lam / rates)
    return counts * rates


def queue_update(q, served, arrivals):
    """One-slot backlog recursion with ACK/NAK retention.

    Unserved bits stay; service applies before the new arrivals land, and
    the backlog can never go negative.
    """
    return np.maximum(np.asarray(q, dtype=float) - served, 0.0) + arrivals


def per_stage_cost(q, beams, flows) -> float:
    """Instantaneous cost: transmit power plus delay-priced backlog."""
    power = float(np.sum(np.abs(beams) ** 2))
    q = np.asarray(q, dtype=float)
    weights = np.array([f.gamma / f.lam for f in flows])
    return power + float(weights @ q)
