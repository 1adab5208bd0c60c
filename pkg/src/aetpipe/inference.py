"""Posterior evaluation and pCN sampling in KL coordinates.

The discrete posterior over latent coefficients x is
pi(x) ~ exp(-Phi(y; x) - |x|^2/2) with the misfit
Phi = sum_pairs ||G_pair(F_p(x)) - y_pair||_l^l / (l * tau_pair^l), l in {1, 2}.
The preconditioned Crank-Nicolson proposal preserves the Gaussian prior,
so acceptance depends on the misfit alone; the step size is tuned toward a
target acceptance rate during warm-up and frozen for the online phase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .fem import NodalField
from .forward import BoundaryInput, NoisySignal, power_density
from .priors import KLBasis, Pushforward, push, realize
from .seeding import stream

BETA_BOUNDS = (1e-4, 0.999)
TARGET_ACCEPT = 0.23
ADAPT_WINDOW = 50
ADAPT_DECAY = 0.6


class ChainAborted(RuntimeError):
    """Forward solve failed mid-chain; carries the partial chain."""

    def __init__(self, message, partial_chain=None):
        super().__init__(message)
        self.partial_chain = partial_chain


@dataclass
class Posterior:
    """Forward context plus observations for one norm kind."""

    inputs: list[BoundaryInput]
    basis: KLBasis
    pushforward: Pushforward
    observations: list[NoisySignal]
    solver_method: str = "direct"

    def __post_init__(self):
        self.mesh = self.basis.mesh
        kinds = {obs.norm_kind for obs in self.observations}
        if len(kinds) > 1:
            raise ValueError(f"observations mix norm kinds {kinds}")
        self.norm_kind = kinds.pop() if kinds else "l2"
        self.ell = 1 if self.norm_kind == "l1" else 2
        for obs in self.observations:
            if obs.y.mesh is not self.mesh:
                raise ValueError("observation mesh differs from basis mesh")
            if obs.tau_noise <= 0:
                raise ValueError(f"pair {obs.pair}: likelihood requires "
                                 f"tau_noise > 0, got {obs.tau_noise}")
            i, j = obs.pair
            if not (1 <= i <= len(self.inputs) and 1 <= j <= len(self.inputs)):
                raise ValueError(f"pair {obs.pair} has no matching input")

    def conductivity(self, x) -> NodalField:
        return push(self.pushforward, realize(self.basis, x))

    def predict(self, x) -> list[NodalField]:
        """Forward power densities for the observation pairs."""
        sigma = self.conductivity(x)
        needed = sorted({i for obs in self.observations for i in obs.pair})
        K = fem.assemble_stiffness(self.mesh, sigma)
        us = {i: fem._solve_lifted(self.mesh, K, self.inputs[i - 1].g,
                                   self.solver_method)
              for i in needed}
        return [power_density(sigma, us[i], us[j], self.solver_method)
                for (i, j) in (obs.pair for obs in self.observations)]


def neg_log_likelihood(post: Posterior, x) -> float:
    """Phi(y; x) >= 0; zero iff the forward output matches every observation."""
    if not post.observations:
        return 0.0
    preds = post.predict(x)
    phi = 0.0
    for obs, pred in zip(post.observations, preds):
        diff = NodalField(post.mesh, pred.coeffs - obs.y.coeffs)
        r = fem.norm(diff, post.norm_kind)
        phi += r**post.ell / (post.ell * obs.tau_noise**post.ell)
    return phi


@dataclass
class PcnStep:
    x: np.ndarray
    accepted: bool
    phi: float


def pcn_step(post: Posterior, x_current, beta: float,
             rng: np.random.Generator, phi_current: float | None = None) -> PcnStep:
    """One preconditioned Crank-Nicolson transition.

    Proposal sqrt(1-beta^2)*x + beta*z with z ~ N(0, I) in KL coordinates;
    accept with probability min(1, exp(Phi(x) - Phi(x*))).
    """
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if phi_current is None:
        phi_current = neg_log_likelihood(post, x_current)
    z = rng.standard_normal(len(x_current))
    x_prop = np.sqrt(1.0 - beta**2) * x_current + beta * z
    phi_prop = neg_log_likelihood(post, x_prop)
    log_alpha = phi_current - phi_prop
    if np.log(rng.uniform()) < min(0.0, log_alpha):
        return PcnStep(x_prop, True, phi_prop)
    return PcnStep(np.asarray(x_current, dtype=float), False, phi_current)


def adapt_beta(beta: float, accept_history, iteration: int,
               target: float = TARGET_ACCEPT, decay: float = ADAPT_DECAY,
               bounds: tuple[float, float] = BETA_BOUNDS) -> float:
    """Robbins-Monro multiplicative update toward the target acceptance rate.

    beta' = clamp(beta * exp(k^(-decay) * (rate - target))) with k the
    1-based adaptation counter; diminishing gain guarantees the adaptation
    washes out.
    """
    rate = float(np.mean(accept_history))
    gain = float(iteration)**(-decay)
    return float(np.clip(beta * np.exp(gain * (rate - target)),
                         bounds[0], bounds[1]))


@dataclass
class Chain:
    """Complete pCN sample record: every state, flag and step size."""

    samples: np.ndarray        # (n_warmup + n_samples, n_kl)
    accept_flags: np.ndarray   # (N,) bool
    beta_history: np.ndarray   # (N,)
    phi_history: np.ndarray    # (N,)
    n_warmup: int
    rng_seed: int

    @property
    def n_online(self) -> int:
        return len(self.samples) - self.n_warmup

    def online_samples(self) -> np.ndarray:
        return self.samples[self.n_warmup:]

    def online_acceptance_rate(self) -> float:
        flags = self.accept_flags[self.n_warmup:]
        return float(flags.mean()) if len(flags) else float("nan")

    def final_beta(self) -> float:
        return float(self.beta_history[-1])

    def phases(self):
        return ["warmup"] * self.n_warmup + ["online"] * self.n_online


def run_chain(post: Posterior, n_warmup: int, n_samples: int, beta0: float,
              seed: int, x0=None, adapt_window: int = ADAPT_WINDOW,
              target_accept: float = TARGET_ACCEPT,
              adapt_decay: float = ADAPT_DECAY,
              beta_bounds: tuple[float, float] = BETA_BOUNDS) -> Chain:
    """Warm-up with step-size adaptation, then a frozen-beta online phase.

    Fully reproducible from the seed; every iteration is recorded.
    """
    if n_warmup < 0 or n_samples < 0:
        raise ValueError("iteration counts must be nonnegative")
    rng = stream(seed, "pcn")
    n_kl = post.basis.n_kl
    x = np.zeros(n_kl) if x0 is None else np.asarray(x0, dtype=float)

    total = n_warmup + n_samples
    samples = np.empty((total, n_kl))
    flags = np.empty(total, dtype=bool)
    betas = np.empty(total)
    phis = np.empty(total)

    beta = float(beta0)
    try:
        phi = neg_log_likelihood(post, x)
    except fem.SolverError as exc:
        raise ChainAborted(f"forward solve failed at the initial state: {exc}",
                          None) from exc

    window: list[bool] = []
    n_adapt = 0
    for it in range(total):
        try:
            step = pcn_step(post, x, beta, rng, phi_current=phi)
        except fem.SolverError as exc:
            partial = Chain(samples[:it].copy(), flags[:it].copy(),
                            betas[:it].copy(), phis[:it].copy(),
                            min(n_warmup, it), seed)
            raise ChainAborted(f"forward solve failed at iteration {it}: "
                               f"{exc}", partial) from exc
        x, phi = step.x, step.phi
        samples[it] = x
        flags[it] = step.accepted
        betas[it] = beta
        phis[it] = phi
        if it < n_warmup:
            window.append(step.accepted)
            if len(window) == adapt_window:
                n_adapt += 1
                beta = adapt_beta(beta, window, n_adapt, target_accept,
                                  adapt_decay, beta_bounds)
                window.clear()
    return Chain(samples, flags, betas, phis, n_warmup, seed)


@dataclass
class PosteriorSummary:
    mean_field: NodalField
    std_field: NodalField
    coeff_mean: np.ndarray
    coeff_hdi_low: np.ndarray
    coeff_hdi_high: np.ndarray
    acceptance_rate: float
    final_beta: float
    n_samples_used: int
    hdi_prob: float = 0.95


def hdi(samples: np.ndarray, prob: float = 0.95) -> tuple[float, float]:
    """Shortest interval containing the given fraction of the samples."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    m = max(1, int(np.ceil(prob * n)))
    if m >= n:
        return float(s[0]), float(s[-1])
    widths = s[m - 1 + np.arange(n - m + 1)] - s[: n - m + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + m - 1])


def summarize(chain: Chain, basis: KLBasis, pushforward: Pushforward,
              burn_in_drop: int = 0, hdi_prob: float = 0.95) -> PosteriorSummary:
    """Nodal mean/std over pushed online samples plus per-coefficient HDIs.

    Warm-up samples are always excluded; burn_in_drop removes additional
    leading online samples.  The std uses the (N-1)-denominator two-pass
    formula.
    """
    xs = chain.online_samples()[burn_in_drop:]
    if len(xs) == 0:
        raise ValueError("no samples remain after burn-in drop")
    fields = pushforward.apply(
        (xs * basis.sqrt_lambdas()) @ basis.modes.T)  # (N, V)
    mean = fields.mean(axis=0)
    if len(xs) > 1:
        std = fields.std(axis=0, ddof=1)
    else:
        std = np.zeros_like(mean)

    lows, highs = [], []
    for k in range(xs.shape[1]):
        lo, hi = hdi(xs[:, k], hdi_prob)
        lows.append(lo)
        highs.append(hi)
    return PosteriorSummary(
        mean_field=NodalField(basis.mesh, mean),
        std_field=NodalField(basis.mesh, std),
        coeff_mean=xs.mean(axis=0),
        coeff_hdi_low=np.asarray(lows),
        coeff_hdi_high=np.asarray(highs),
        acceptance_rate=chain.online_acceptance_rate(),
        final_beta=chain.final_beta(),
        n_samples_used=len(xs),
        hdi_prob=hdi_prob)


# ---------------------------------------------------------------------------
# File output

def save_chain(chain: Chain, path, thin: int = 1) -> None:
    """CSV: iter,accepted,beta,phase,x_0..x_{K-1} (online rows thinned)."""
    n_kl = chain.samples.shape[1]
    phases = chain.phases()
    with open(path, "w") as fh:
        fh.write("iter,accepted,beta,phase,"
                 + ",".join(f"x_{k}" for k in range(n_kl)) + "\n")
        for it in range(len(chain.samples)):
            if phases[it] == "online" and (it - chain.n_warmup) % thin != 0:
                continue
            row = [str(it), str(int(chain.accept_flags[it])),
                   repr(float(chain.beta_history[it])), phases[it]]
            row += [repr(float(v)) for v in chain.samples[it]]
            fh.write(",".join(row) + "\n")


SUMMARY_SCHEMA = {
    "acceptance_rate": float,
    "final_beta": float,
    "n_samples_used": int,
    "hdi_prob": float,
    "coefficients": list,
}

COEFFICIENT_SCHEMA = {
    "index": int,
    "mean": float,
    "hdi_low": float,
    "hdi_high": float,
}


def validate_summary_payload(payload: dict) -> list[str]:
    """Check a summary JSON document against the shipped schema; returns a
    list of problem descriptions (empty when valid)."""
    problems = []
    for key, typ in SUMMARY_SCHEMA.items():
        if key not in payload:
            problems.append(f"missing key {key!r}")
        elif typ is float and not isinstance(payload[key], (int, float)):
            problems.append(f"{key} must be a number")
        elif typ is not float and not isinstance(payload[key], typ):
            problems.append(f"{key} must be {typ.__name__}")
    for extra in set(payload) - set(SUMMARY_SCHEMA):
        problems.append(f"unknown key {extra!r}")
    for i, c in enumerate(payload.get("coefficients", [])):
        for key, typ in COEFFICIENT_SCHEMA.items():
            if key not in c:
                problems.append(f"coefficients[{i}]: missing {key!r}")
            elif typ is float and not isinstance(c[key], (int, float)):
                problems.append(f"coefficients[{i}].{key} must be a number")
            elif typ is int and not isinstance(c[key], int):
                problems.append(f"coefficients[{i}].{key} must be an int")
    return problems


def save_summary(summary: PosteriorSummary, path) -> None:
    payload = {
        "acceptance_rate": summary.acceptance_rate,
        "final_beta": summary.final_beta,
        "n_samples_used": summary.n_samples_used,
        "hdi_prob": summary.hdi_prob,
        "coefficients": [
            {"index": k,
             "mean": float(summary.coeff_mean[k]),
             "hdi_low": float(summary.coeff_hdi_low[k]),
             "hdi_high": float(summary.coeff_hdi_high[k])}
            for k in range(len(summary.coeff_mean))],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
