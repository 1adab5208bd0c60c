#!/usr/bin/env python3
"""Chain diagnostics: trace plots for the first four latent coefficients
plus posterior means with 95% HDI bars for the first ten.

Usage:
  plot_diagnostics.py --chain chain.csv --summary summary.json --out d.png
"""

from __future__ import annotations

import argparse
import sys
import warnings

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

import figlib

N_TRACE = 4
N_HDI = 10


def render(chain: figlib.ChainData, summary: dict):
    n_coeff = chain.samples.shape[1]
    n_trace = min(N_TRACE, n_coeff)
    if chain.samples.shape[0] < 10:
        warnings.warn(f"chain has only {chain.samples.shape[0]} rows; "
                      f"plotting what exists")

    fig = plt.figure(figsize=(10, 7))
    gs = fig.add_gridspec(3, 2, height_ratios=[1, 1, 1.2])

    online = np.array([p == "online" for p in chain.phase])
    for k in range(n_trace):
        ax = fig.add_subplot(gs[k // 2, k % 2])
        ax.plot(chain.iters, chain.samples[:, k], linewidth=0.6,
                color="tab:blue")
        if online.any() and not online.all():
            ax.axvline(chain.iters[np.argmax(online)], color="gray",
                       linestyle="--", linewidth=0.8)
        ax.set_title(f"trace of x_{k}", fontsize=10)
        ax.set_xlabel("iteration", fontsize=8)

    ax = fig.add_subplot(gs[2, :])
    coeffs = summary["coefficients"][:N_HDI]
    idx = np.array([c["index"] for c in coeffs])
    mean = np.array([c["mean"] for c in coeffs])
    lo = np.array([c["hdi_low"] for c in coeffs])
    hi = np.array([c["hdi_high"] for c in coeffs])
    # bars drawn from the stored bounds directly (exact passthrough)
    ax.plot(idx, mean, "o", color="tab:red", zorder=3)
    ax.vlines(idx, lo, hi, color="black", linewidth=1.5)
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_xticks(idx)
    ax.set_xlabel("coefficient index")
    prob = summary.get("hdi_prob", 0.95)
    ax.set_title(f"posterior mean and {prob:.0%} HDI")
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--chain", required=True)
    parser.add_argument("--summary", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args(argv)

    chain = figlib.read_chain(args.chain)
    if chain.samples.shape[1] < N_TRACE:
        raise SystemExit(f"chain has only {chain.samples.shape[1]} "
                         f"coefficients; need at least {N_TRACE}")
    summary = figlib.read_summary(args.summary)
    fig = render(chain, summary)
    fig.savefig(args.out, dpi=args.dpi)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
