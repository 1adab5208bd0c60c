"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line and enforcing its runtime budget.  Run with `pytest -s
tests/test_acceptance.py` to see the lines as they complete."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import jn_zeros

from aetpipe import cli, fem, forward, inference
from aetpipe.config import load_config, save_config
from aetpipe.fem import NodalField
from aetpipe.inference import Posterior, run_chain, summarize
from aetpipe.mesh import build_disk_mesh, load_mesh, refine_nested
from aetpipe.priors import Pushforward, build_kl_basis

from conftest import field, interp

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def report(name, ok, detail):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


class Budget:
    def __init__(self, seconds):
        self.limit = seconds
        self.start = time.monotonic()

    def elapsed(self):
        return time.monotonic() - self.start

    def check(self, name):
        assert self.elapsed() < self.limit, (
            f"{name} exceeded the runtime budget: "
            f"{self.elapsed():.1f}s >= {self.limit}s")


@pytest.fixture(scope="module")
def desk_quarter_runs(tmp_path_factory):
    """The desk quarter-view pipeline, repeated into the same directory;
    returns (out_dir, snapshot of every file after the first pass)."""
    out = tmp_path_factory.mktemp("quarter")
    cfg = load_config(CONFIG_DIR / "desk_quarter_l1_f3.json")
    cfg.output_dir = str(out)
    cfg_path = tmp_path_factory.mktemp("cfg") / "config.json"
    save_config(cfg, cfg_path)

    def run_all():
        for cmd in ("generate", "bayes"):
            rc = cli.main(["--config", str(cfg_path), "--deterministic", cmd])
            assert rc == 0, f"{cmd} failed"

    run_all()
    snapshot = {str(f.relative_to(out)): f.read_bytes()
                for f in out.rglob("*") if f.is_file()}
    run_all()
    return out, cfg_path, snapshot


def test_fem_correctness():
    budget = Budget(10.0)
    mesh = build_disk_mesh(0.1, 1.0, 0.0)
    ones = field(mesh, np.ones(mesh.vertex_count))
    g = np.where(mesh.boundary_vertex_mask(), mesh.vertices[:, 0], 0.0)
    u = fem.solve_dirichlet(mesh, ones, field(mesh, g))
    linear_err = np.abs(u.coeffs - mesh.vertices[:, 0]).max()

    def l2_err(m):
        exact = m.vertices[:, 0] ** 2 - m.vertices[:, 1] ** 2
        gb = np.where(m.boundary_vertex_mask(), exact, 0.0)
        o = field(m, np.ones(m.vertex_count))
        uu = fem.solve_dirichlet(m, o, field(m, gb))
        return fem.norm_l2(field(m, uu.coeffs - exact))

    fine = refine_nested(mesh).fine
    ratio = l2_err(mesh) / l2_err(fine)
    budget.check("FEM correctness")
    report("FEM correctness",
           linear_err <= 1e-10 and 3.0 <= ratio <= 5.0,
           f"linear error {linear_err:.2e}, refinement ratio {ratio:.2f}, "
           f"{budget.elapsed():.1f}s")


def test_eigenproblem_accuracy():
    budget = Budget(30.0)
    mesh = build_disk_mesh(0.05, 1.0, 0.0)
    interior = mesh.interior_vertices()
    ones = field(mesh, np.ones(mesh.vertex_count))
    K = fem.assemble_stiffness(mesh, ones)[interior][:, interior].tocsr()
    M = fem.mass_matrix(mesh)[interior][:, interior].tocsr()
    vals, _ = fem.eigs_smallest(K, M, 4)
    j01_sq = jn_zeros(0, 1)[0] ** 2
    rel = abs(vals[0] - j01_sq) / j01_sq
    budget.check("Eigenproblem accuracy")
    report("Eigenproblem accuracy", rel <= 0.02,
           f"lambda_1 = {vals[0]:.4f} vs {j01_sq:.4f} "
           f"(rel {rel:.4f}), {budget.elapsed():.1f}s")


def test_kl_variance_pin():
    budget = Budget(120.0)
    paper_cfg = load_config(CONFIG_DIR / "paper_full_l1_f3.json")
    mesh = build_disk_mesh(paper_cfg.mesh.target_h, 1.0, 0.0)
    basis = build_kl_basis(mesh, paper_cfg.prior.matern_tau,
                           paper_cfg.prior.matern_alpha,
                           paper_cfg.prior.n_kl, paper_cfg.prior.pool_size)
    desk_cfg = load_config(CONFIG_DIR / "desk_full_l1_f3.json")
    dmesh = build_disk_mesh(desk_cfg.mesh.target_h, 1.0, 0.0)
    dbasis = build_kl_basis(dmesh, desk_cfg.prior.matern_tau,
                            desk_cfg.prior.matern_alpha,
                            desk_cfg.prior.n_kl, desk_cfg.prior.pool_size)
    budget.check("KL variance pin")
    report("KL variance pin",
           basis.variance_retained >= 0.95 and dbasis.variance_retained >= 0.95,
           f"paper scale ({paper_cfg.prior.n_kl} modes) "
           f"{basis.variance_retained:.4f}, desk ({desk_cfg.prior.n_kl} "
           f"modes) {dbasis.variance_retained:.4f}, {budget.elapsed():.1f}s")


def test_noise_scaling_exactness():
    mesh = build_disk_mesh(0.1, 1.0, 0.0)
    pair = refine_nested(mesh)
    sigma = forward.phantom_field(pair.fine)
    b = forward.make_boundary_input(pair.fine, 1)
    worst = 0.0
    for kind, d in (("l2", 0.01), ("l1", 0.001)):
        clean, noisy = forward.generate_data(sigma, pair, [b], d, kind, 101)
        diff = NodalField(mesh, noisy[0].y.coeffs - clean[0].h.coeffs)
        rel = fem.norm(diff, kind) / fem.norm(clean[0].h, kind)
        worst = max(worst, abs(rel - d))
    report("Noise scaling exactness", worst <= 1e-12,
           f"max deviation from target level {worst:.2e}")


def test_likelihood_lipschitz_suite(disk_h02):
    basis = build_kl_basis(disk_h02, 6.0, 2.0, 10, 20)
    pf = Pushforward(kind="sigmoid")
    bi = forward.make_boundary_input(disk_h02, 1)
    rng = np.random.default_rng(41)
    n = disk_h02.vertex_count
    viol_l1 = viol_l2 = 0
    for _ in range(100):
        x = rng.standard_normal(10)
        y1, y2 = rng.normal(size=(2, n))
        tau = rng.uniform(0.3, 2.0)

        def phi(yv, kind):
            obs = forward.NoisySignal(y=NodalField(disk_h02, yv),
                                      tau_noise=tau, d_noise=0.01,
                                      norm_kind=kind, rng_seed=0, pair=(1, 1))
            post = Posterior(inputs=[bi], basis=basis, pushforward=pf,
                             observations=[obs])
            return inference.neg_log_likelihood(post, x), post

        p1, post = phi(y1, "l1")
        p2, _ = phi(y2, "l1")
        bound = fem.norm_l1(field(disk_h02, y1 - y2)) / tau
        if abs(p1 - p2) > bound + 1e-12:
            viol_l1 += 1

        q1, post = phi(y1, "l2")
        q2, _ = phi(y2, "l2")
        h = post.predict(x)[0]
        r = max(fem.norm_l2(field(disk_h02, y1)),
                fem.norm_l2(field(disk_h02, y2)))
        bound = ((r + fem.norm_l2(h))
                 * fem.norm_l2(field(disk_h02, y1 - y2)) / tau**2)
        if abs(q1 - q2) > bound + 1e-12:
            viol_l2 += 1
    report("Likelihood Lipschitz suite", viol_l1 == 0 and viol_l2 == 0,
           f"violations: L1 {viol_l1}/100, L2 {viol_l2}/100")


def test_pcn_prior_preservation(disk_h02):
    budget = Budget(60.0)
    basis = build_kl_basis(disk_h02, 6.0, 2.0, 10, 20)
    post = Posterior(inputs=[], basis=basis,
                     pushforward=Pushforward(kind="sigmoid"), observations=[])
    beta = 0.5
    n_steps = 10_000
    chain = run_chain(post, 0, n_steps, beta, seed=404)
    xs = chain.online_samples()
    assert chain.accept_flags.all()  # flat likelihood accepts everything

    rho = math.sqrt(1.0 - beta**2)
    n_eff = n_steps * (1 - rho) / (1 + rho)
    mean_tol = 4.0 / math.sqrt(n_eff)
    means = xs.mean(axis=0)[:10]
    variances = xs.var(axis=0, ddof=1)[:10]
    ok = (np.abs(means) <= mean_tol).all() and \
        np.all((variances >= 0.9) & (variances <= 1.1))
    budget.check("pCN prior preservation")
    report("pCN prior preservation", ok,
           f"max |mean| {np.abs(means).max():.4f} (tol {mean_tol:.4f}), "
           f"var range [{variances.min():.3f}, {variances.max():.3f}], "
           f"{budget.elapsed():.1f}s")


def test_adaptive_targeting(desk_quarter_runs):
    budget = Budget(1200.0)
    out, _, _ = desk_quarter_runs
    payload = json.loads((out / "summary.json").read_text())
    rate = payload["acceptance_rate"]
    beta = payload["final_beta"]
    ok = 0.15 <= rate <= 0.35 and 0.01 < beta < 0.9
    budget.check("Adaptive targeting")
    report("Adaptive targeting", ok,
           f"acceptance {rate:.3f}, frozen beta {beta:.4f}")


def test_misfit_decreases_at_posterior_mean(desk_quarter_runs):
    # sanity criterion from the runner contract: Phi(mean latent) <= Phi(0)
    out, cfg_path, _ = desk_quarter_runs
    cfg = load_config(cfg_path)
    mesh = build_disk_mesh(cfg.mesh.target_h, cfg.mesh.view_fraction,
                           cfg.mesh.view_offset)
    rows = np.loadtxt(out / "chain.csv", delimiter=",", skiprows=1,
                      usecols=range(4, 4 + cfg.prior.n_kl))
    xs = rows[cfg.sampler.n_warmup:]
    basis = build_kl_basis(mesh, cfg.prior.matern_tau, cfg.prior.matern_alpha,
                           cfg.prior.n_kl, cfg.prior.pool_size)
    meta = json.loads((out / "data_1_1.meta.json").read_text())
    h, y = np.loadtxt(out / "data_1_1.csv", delimiter=",", skiprows=1,
                      usecols=(3, 4), unpack=True)
    obs = forward.NoisySignal(y=NodalField(mesh, y),
                              tau_noise=meta["tau_noise"], d_noise=meta["d_noise"],
                              norm_kind=meta["norm_kind"], rng_seed=meta["seed"],
                              pair=(1, 1))
    post = Posterior(inputs=[forward.make_boundary_input(mesh, cfg.inputs.ell_bound)],
                     basis=basis, pushforward=Pushforward(
                         kind=cfg.prior.kind, sigma_minus=cfg.prior.sigma_minus,
                         sigma_plus=cfg.prior.sigma_plus,
                         sharpness=cfg.prior.sharpness),
                     observations=[obs])
    phi_mean = inference.neg_log_likelihood(post, xs.mean(axis=0))
    phi_zero = inference.neg_log_likelihood(post, np.zeros(cfg.prior.n_kl))
    report("Misfit decrease at posterior mean", phi_mean <= phi_zero,
           f"Phi(mean) {phi_mean:.2f} <= Phi(0) {phi_zero:.2f}")


def test_analytic_constant_sigma_exactness():
    budget = Budget(30.0)
    from aetpipe import analytic

    mesh = build_disk_mesh(0.1, 1.0, 0.0)
    c = 2.5
    sigma = field(mesh, np.full(mesh.vertex_count, c))
    b1 = forward.linear_input(mesh, (1.0, 0.0))
    b2 = forward.linear_input(mesh, (0.0, 1.0))
    u1, u2 = forward.solve_potentials(sigma, [b1, b2])
    h11 = forward.power_density(sigma, u1, u1)
    h12 = forward.power_density(sigma, u1, u2)
    h22 = forward.power_density(sigma, u2, u2)
    Y = analytic.MatrixField(mesh, h11.coeffs, h12.coeffs, h22.coeffs)
    T = analytic.build_T(analytic.threshold_eigenvalues(Y, 1e-8))
    theta_b = analytic.boundary_theta_truth(T, sigma, u1, u2)
    res = analytic.reconstruct(Y, 1e-8, theta_b,
                               np.full(mesh.vertex_count, np.log(c)))
    rel = np.abs(res.sigma.coeffs - c).max() / c
    budget.check("Analytic constant-sigma exactness")
    report("Analytic constant-sigma exactness", rel <= 1e-6,
           f"max relative error {rel:.2e}, {budget.elapsed():.1f}s")


def test_analytic_smooth_self_convergence():
    from aetpipe import analytic

    def err(h, gauge):
        mesh = build_disk_mesh(h, 1.0, 0.0)
        xs, ys = mesh.vertices[:, 0], mesh.vertices[:, 1]
        sig = 4.0 + 2.0 * np.exp(-((xs - 0.2) ** 2 + (ys - 0.1) ** 2) / 0.09)
        sigma = NodalField(mesh, sig)
        b1 = forward.linear_input(mesh, (1.0, 0.0))
        b2 = forward.linear_input(mesh, (0.0, 1.0))
        u1, u2 = forward.solve_potentials(sigma, [b1, b2])
        h11 = forward.power_density(sigma, u1, u1)
        h12 = forward.power_density(sigma, u1, u2)
        h22 = forward.power_density(sigma, u2, u2)
        Y = analytic.MatrixField(mesh, h11.coeffs, h12.coeffs, h22.coeffs)
        T = analytic.build_T(analytic.threshold_eigenvalues(Y, 1e-8))
        theta_b = analytic.boundary_theta_truth(T, sigma, u1, u2)
        logsig_b = np.where(mesh.boundary_vertex_mask(), np.log(sig), 0.0)
        res = analytic.reconstruct(Y, 1e-8, theta_b, logsig_b, gauge=gauge)
        return (fem.norm_l2(NodalField(mesh, res.sigma.coeffs - sig))
                / fem.norm_l2(sigma))

    # the verification protocol: the shipped gauge must self-converge
    coarse, fine = err(0.1, "rotated"), err(0.05, "rotated")
    ratio = fine / coarse
    report("Analytic smooth-phantom self-convergence", ratio < 1.0,
           f"relative errors {coarse:.5f} -> {fine:.5f} (ratio {ratio:.3f}), "
           f"shipped gauge 'rotated'")


def test_limited_view_inclusion_detection(tmp_path):
    budget = Budget(2700.0)
    cfg = load_config(CONFIG_DIR / "desk_eighth_l1_f3.json")
    cfg.output_dir = str(tmp_path / "eighth")
    cfg_path = tmp_path / "eighth.json"
    save_config(cfg, cfg_path)
    for cmd in ("generate", "bayes"):
        assert cli.main(["--config", str(cfg_path), "--deterministic",
                         cmd]) == 0

    out = Path(cfg.output_dir)
    mesh = load_mesh(out / "mesh_coarse.txt")
    mean = fem.load_field(mesh, out / "mean.csv").coeffs
    std = fem.load_field(mesh, out / "std.csv").coeffs

    pts = mesh.vertices
    r = np.hypot(pts[:, 0], pts[:, 1])
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    arc_center = cfg.mesh.view_offset + math.pi * cfg.mesh.view_fraction
    adist = np.abs(np.angle(np.exp(1j * (ang - arc_center))))
    incs = cfg.phantom.inclusion_objects()
    near_inc = incs[0]  # centered under the Gamma_1 arc
    w = cfg.phantom.mollify_width

    near = np.hypot(pts[:, 0] - near_inc.cx,
                    pts[:, 1] - near_inc.cy) <= near_inc.radius - w
    outside = np.all([np.hypot(pts[:, 0] - i.cx, pts[:, 1] - i.cy)
                      > i.radius + 0.08 for i in incs], axis=0)
    far_bg = outside & (adist > np.pi / 2) & (r < 0.85)
    near_bg = outside & (adist <= np.pi / 4) & (r >= 0.55) & (r < 0.97)
    for region in (near, far_bg, near_bg):
        assert region.sum() >= 10

    near_mean = mean[near].mean()
    far_mean = mean[far_bg].mean()
    near_bg_std = std[near_bg].mean()
    med_std = float(np.median(std))
    ok = near_mean >= 6.0 and far_mean <= 5.0 and near_bg_std < med_std
    budget.check("Limited-view inclusion detection")
    report("Limited-view inclusion detection", ok,
           f"near-inclusion mean {near_mean:.3f} (>= 6), far background "
           f"{far_mean:.3f} (<= 5), near-arc background std {near_bg_std:.3f}"
           f" < global median {med_std:.3f}, {budget.elapsed():.0f}s")


def test_determinism_byte_identical(desk_quarter_runs):
    out, _, snapshot = desk_quarter_runs
    current = {str(f.relative_to(out)): f.read_bytes()
               for f in out.rglob("*") if f.is_file()}
    assert set(current) == set(snapshot)
    mismatches = [n for n in sorted(snapshot) if current[n] != snapshot[n]]
    report("Determinism", not mismatches,
           f"{len(snapshot)} files compared, mismatches: {mismatches or 'none'}")
