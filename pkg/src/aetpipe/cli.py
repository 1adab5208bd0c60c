"""Configuration-driven experiment runner.

Subcommands: generate (synthetic data), bayes (pCN posterior run),
analytic (two-step reconstruction), compare (error/trust report),
mesh-info.  Exit codes: 0 success, 2 config error, 3 data-quality abort,
4 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA_QUALITY = 3
EXIT_SOLVER = 4


class DataQualityError(RuntimeError):
    pass


def _limit_threads():
    # must run before numpy initializes its BLAS thread pools
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aetpipe",
        description="Acousto-electric tomography pipeline on the unit disk")
    parser.add_argument("--config", required=True, help="experiment JSON")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides config output_dir)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override both the data and sampler seeds")
    parser.add_argument("--deterministic", action="store_true",
                        help="force single-threaded BLAS for bitwise "
                             "reproducible runs")
    parser.add_argument("command",
                        choices=["generate", "bayes", "analytic", "compare",
                                 "mesh-info"])
    return parser


def _load(args):
    from .config import load_config

    cfg = load_config(args.config)
    if args.out is not None:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.noise.seed = args.seed
        cfg.sampler.seed = args.seed
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _build_meshes(cfg):
    from .mesh import build_disk_mesh, refine_nested

    coarse = build_disk_mesh(cfg.mesh.target_h, cfg.mesh.view_fraction,
                             cfg.mesh.view_offset)
    return refine_nested(coarse)


def _build_inputs(cfg, mesh):
    from .forward import make_boundary_input, make_sine_input

    inputs = [make_boundary_input(mesh, cfg.inputs.ell_bound)]
    if cfg.inputs.include_f2:
        inputs.append(make_sine_input(mesh, cfg.inputs.ell_bound,
                                      cfg.inputs.f2_taper_fraction))
    return inputs


def _pairs(cfg):
    if cfg.inputs.include_f2:
        return [(1, 1), (1, 2), (2, 2)]
    return [(1, 1)]


def _data_path(out, pair):
    return out / f"data_{pair[0]}_{pair[1]}.csv"


def _write_data_csv(path, mesh, h, y):
    with open(path, "w") as fh:
        fh.write("vertex,x,y,h,y_obs\n")
        for i, ((x, yy), hv, yv) in enumerate(zip(mesh.vertices, h, y)):
            fh.write(f"{i},{float(x)!r},{float(yy)!r},"
                     f"{float(hv)!r},{float(yv)!r}\n")


def _read_data_csv(path, mesh):
    import numpy as np

    h = np.full(mesh.vertex_count, np.nan)
    y = np.full(mesh.vertex_count, np.nan)
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "vertex,x,y,h,y_obs":
            raise DataQualityError(f"{path}: unexpected header {header!r}")
        for line in fh:
            idx, _x, _y, hv, yv = line.strip().split(",")
            h[int(idx)] = float(hv)
            y[int(idx)] = float(yv)
    if np.any(np.isnan(h)) or np.any(np.isnan(y)):
        raise DataQualityError(f"{path}: missing vertices")
    return h, y


def cmd_generate(cfg) -> int:
    import numpy as np

    from . import analytic, fem, forward
    from .config import save_config
    from .mesh import save_mesh

    out = _out_dir(cfg)
    pair = _build_meshes(cfg)
    coarse, fine = pair.coarse, pair.fine
    save_mesh(coarse, out / "mesh_coarse.txt")
    save_mesh(fine, out / "mesh_fine.txt")

    inclusions = cfg.phantom.inclusion_objects()
    sigma_fine = forward.phantom_field(fine, cfg.phantom.background,
                                       inclusions, cfg.phantom.mollify_width)
    sigma_coarse = forward.phantom_field(coarse, cfg.phantom.background,
                                         inclusions, cfg.phantom.mollify_width)
    fem.save_field(sigma_fine, out / "truth_fine.csv")
    fem.save_field(sigma_coarse, out / "truth_coarse.csv")

    inputs = _build_inputs(cfg, fine)
    pairs = _pairs(cfg)
    us = forward.solve_potentials(sigma_fine, inputs, cfg.solver.method)

    meta_common = {
        "d_noise": cfg.noise.d_noise,
        "norm_kind": cfg.noise.norm_kind,
        "seed": cfg.noise.seed,
        "ell_bound": cfg.inputs.ell_bound,
        "view_fraction": cfg.mesh.view_fraction,
    }
    gen_meta = dict(meta_common)
    gen_meta["pairs"] = [list(p) for p in pairs]

    for (i, j) in pairs:
        h_fine = forward.power_density(sigma_fine, us[i - 1], us[j - 1],
                                       cfg.solver.method)
        h_c = forward.restrict_to_coarse(pair, h_fine)
        sig = forward.add_scaled_noise(h_c, cfg.noise.d_noise,
                                       cfg.noise.norm_kind, cfg.noise.seed,
                                       (i, j))
        _write_data_csv(_data_path(out, (i, j)), coarse, h_c.coeffs,
                        sig.y.coeffs)
        meta = dict(meta_common)
        meta.update({"pair": [i, j], "tau_noise": sig.tau_noise})
        _write_json(out / f"data_{i}_{j}.meta.json", meta)

    if cfg.inputs.include_f2:
        jac = forward.check_jacobian_condition(us[0], us[1])
        gen_meta["min_det_jacobian"] = jac.min_det
        gen_meta["max_det_jacobian"] = float(jac.dets.max())
        gen_meta["fraction_det_nonpositive"] = jac.fraction_nonpositive

        # boundary truth for the analytic Dirichlet problems, taken from the
        # noise-free fine-mesh solution and restricted to coarse vertices
        h11 = forward.power_density(sigma_fine, us[0], us[0], cfg.solver.method)
        h12 = forward.power_density(sigma_fine, us[0], us[1], cfg.solver.method)
        h22 = forward.power_density(sigma_fine, us[1], us[1], cfg.solver.method)
        Yf = analytic.MatrixField(fine, h11.coeffs, h12.coeffs, h22.coeffs)
        Tf = analytic.build_T(analytic.threshold_eigenvalues(
            Yf, cfg.analytic.threshold_b))
        theta_f = analytic.boundary_theta_truth(Tf, sigma_fine, us[0], us[1])
        theta_c = theta_f[pair.injection]
        logsig_c = np.where(coarse.boundary_vertex_mask(),
                            np.log(sigma_coarse.coeffs), 0.0)
        with open(out / "boundary_truth.csv", "w") as fh:
            fh.write("vertex,theta_true,log_sigma_true\n")
            for v in coarse.boundary_vertices():
                fh.write(f"{v},{float(theta_c[v])!r},{float(logsig_c[v])!r}\n")

    _write_json(out / "generate_meta.json", gen_meta)
    save_config(cfg, out / "config_used.json")
    print(f"generate: wrote {len(pairs)} data pair(s) to {out}")
    return EXIT_OK


def _kl_basis_cached(cfg, mesh, out: Path):
    import numpy as np

    from .priors import KLBasis, build_kl_basis

    key = hashlib.sha256()
    key.update(mesh.vertices.tobytes())
    key.update(mesh.triangles.tobytes())
    key.update(f"{cfg.prior.matern_tau!r}|{cfg.prior.matern_alpha!r}|"
               f"{cfg.prior.n_kl}|{cfg.prior.pool_size}".encode())
    tag = key.hexdigest()[:16]
    cache = out / "kl_cache"
    lam_p = cache / f"{tag}_lambdas.npy"
    modes_p = cache / f"{tag}_modes.npy"
    meta_p = cache / f"{tag}_meta.json"
    if lam_p.exists() and modes_p.exists() and meta_p.exists():
        with open(meta_p) as fh:
            meta = json.load(fh)
        return KLBasis(mesh=mesh, n_kl=cfg.prior.n_kl,
                       lambdas=np.load(lam_p), modes=np.load(modes_p),
                       matern_tau=cfg.prior.matern_tau,
                       matern_alpha=cfg.prior.matern_alpha,
                       pool_size=cfg.prior.pool_size,
                       variance_retained=meta["variance_retained"])
    basis = build_kl_basis(mesh, cfg.prior.matern_tau, cfg.prior.matern_alpha,
                           cfg.prior.n_kl, cfg.prior.pool_size)
    cache.mkdir(parents=True, exist_ok=True)
    np.save(lam_p, basis.lambdas)
    np.save(modes_p, basis.modes)
    _write_json(meta_p, {"variance_retained": basis.variance_retained})
    return basis


def _pushforward(cfg):
    from .priors import Pushforward

    return Pushforward(kind=cfg.prior.kind,
                       sigma_minus=cfg.prior.sigma_minus,
                       sigma_plus=cfg.prior.sigma_plus,
                       sharpness=cfg.prior.sharpness,
                       a=cfg.prior.f1_shift, b=cfg.prior.f1_scale)


def cmd_bayes(cfg) -> int:
    import numpy as np

    from . import fem, forward, inference
    from .fem import NodalField
    from .seeding import stream

    out = _out_dir(cfg)
    pair = _build_meshes(cfg)
    coarse = pair.coarse

    path = _data_path(out, (1, 1))
    if not path.exists():
        raise DataQualityError(f"missing data file {path}; run generate first")
    _h, y = _read_data_csv(path, coarse)
    with open(out / "data_1_1.meta.json") as fh:
        meta = json.load(fh)
    if meta["norm_kind"] != cfg.noise.norm_kind:
        raise DataQualityError(
            f"data norm kind {meta['norm_kind']!r} does not match config "
            f"{cfg.noise.norm_kind!r}")

    obs = forward.NoisySignal(
        y=NodalField(coarse, y), tau_noise=meta["tau_noise"],
        d_noise=meta["d_noise"], norm_kind=meta["norm_kind"],
        rng_seed=meta["seed"], pair=(1, 1))

    inputs = [_build_inputs(cfg, coarse)[0]]
    basis = _kl_basis_cached(cfg, coarse, out)
    post = inference.Posterior(inputs=inputs, basis=basis,
                               pushforward=_pushforward(cfg),
                               observations=[obs],
                               solver_method=cfg.solver.method)

    s = cfg.sampler
    chains = []
    for c in range(s.n_chains):
        seed_c = s.seed if s.n_chains == 1 else int(
            stream(s.seed, "chain", c).integers(2**31))
        chain = inference.run_chain(
            post, s.n_warmup, s.n_samples, s.beta0, seed_c,
            adapt_window=s.adapt_window, target_accept=s.target_accept,
            adapt_decay=s.adapt_decay, beta_bounds=(s.beta_min, s.beta_max))
        chains.append(chain)
        name = "chain.csv" if c == 0 else f"chain_{c}.csv"
        inference.save_chain(chain, out / name, thin=s.thin)

    if len(chains) == 1:
        pooled = chains[0]
    else:
        pooled = inference.Chain(
            samples=np.concatenate([c.online_samples()[s.burn_in_drop:]
                                    for c in chains]),
            accept_flags=np.concatenate([c.accept_flags[c.n_warmup:]
                                         for c in chains]),
            beta_history=np.concatenate([c.beta_history[c.n_warmup:]
                                         for c in chains]),
            phi_history=np.concatenate([c.phi_history[c.n_warmup:]
                                        for c in chains]),
            n_warmup=0, rng_seed=s.seed)
    summary = inference.summarize(pooled, basis, post.pushforward,
                                  burn_in_drop=s.burn_in_drop
                                  if len(chains) == 1 else 0)
    inference.save_summary(summary, out / "summary.json")
    fem.save_field(summary.mean_field, out / "mean.csv")
    fem.save_field(summary.std_field, out / "std.csv")
    print(f"bayes: acceptance {summary.acceptance_rate:.3f}, "
          f"final beta {summary.final_beta:.4f}, wrote {out}")
    return EXIT_OK


def cmd_analytic(cfg) -> int:
    import numpy as np

    from . import analytic, fem
    from .fem import NodalField

    out = _out_dir(cfg)
    pair = _build_meshes(cfg)
    coarse = pair.coarse

    for p in [(1, 1), (1, 2), (2, 2)]:
        if not _data_path(out, p).exists():
            raise DataQualityError(
                f"missing data file {_data_path(out, p)}; "
                f"run generate with inputs.include_f2 = true")
    with open(out / "generate_meta.json") as fh:
        gen_meta = json.load(fh)
    min_det = gen_meta.get("min_det_jacobian")
    max_det = gen_meta.get("max_det_jacobian", 0.0)
    if min_det is None:
        raise DataQualityError("no Jacobian check in generate_meta.json; "
                               "regenerate the data with inputs.include_f2")
    # det -> 0 along the grounded boundary in limited view, so require that
    # any negative part is negligible against the data scale
    if max_det <= 0 or min_det < -cfg.analytic.jacobian_rel_tol * max_det:
        raise DataQualityError(
            f"Jacobian condition violated on noise-free data "
            f"(min det = {min_det:.3e}, max det = {max_det:.3e}); "
            f"aborting the analytic run")

    fields = {}
    for p in [(1, 1), (1, 2), (2, 2)]:
        _h, y = _read_data_csv(_data_path(out, p), coarse)
        fields[p] = y
    Y = analytic.MatrixField(coarse, fields[(1, 1)], fields[(1, 2)],
                             fields[(2, 2)])

    theta_b = np.zeros(coarse.vertex_count)
    logsig_b = np.zeros(coarse.vertex_count)
    with open(out / "boundary_truth.csv") as fh:
        header = fh.readline().strip()
        if header != "vertex,theta_true,log_sigma_true":
            raise DataQualityError(f"unexpected boundary truth header {header!r}")
        for line in fh:
            v, th, ls = line.strip().split(",")
            theta_b[int(v)] = float(th)
            logsig_b[int(v)] = float(ls)

    result = analytic.reconstruct(Y, cfg.analytic.threshold_b, theta_b,
                                  logsig_b, gauge=cfg.analytic.gauge,
                                  method=cfg.solver.method)
    fem.save_field(result.theta, out / "theta.csv")
    fem.save_field(result.log_sigma, out / "log_sigma_analytic.csv")
    fem.save_field(result.sigma, out / "sigma_analytic.csv")
    report = dict(result.report)
    report["min_det_jacobian"] = min_det
    _write_json(out / "analytic_report.json", report)
    print(f"analytic: min eig before thresholding "
          f"{report['min_eig_before']:.4g}, fraction thresholded "
          f"{report['fraction_thresholded']:.3f}, wrote {out}")
    return EXIT_OK


def cmd_compare(cfg) -> int:
    import numpy as np

    from . import fem
    from .fem import NodalField

    out = _out_dir(cfg)
    pair = _build_meshes(cfg)
    coarse = pair.coarse

    truth = fem.load_field(coarse, out / "truth_coarse.csv")

    def rel_errors(recon):
        diff = NodalField(coarse, recon.coeffs - truth.coeffs)
        return {
            "rel_l2": fem.norm_l2(diff) / fem.norm_l2(truth),
            "rel_l1": fem.norm_l1(diff) / fem.norm_l1(truth),
        }

    report = {"trust_std_threshold": cfg.compare.trust_std_threshold,
              "mesh_area": coarse.area()}
    rows = []

    mean_p = out / "mean.csv"
    if mean_p.exists():
        mean = fem.load_field(coarse, mean_p)
        std = fem.load_field(coarse, out / "std.csv")
        report["bayes"] = rel_errors(mean)
        areas = fem.lumped_vertex_areas(coarse)
        trusted = std.coeffs < cfg.compare.trust_std_threshold
        report["bayes"]["trusted_region_area"] = float(areas[trusted].sum())
        rows.append(("posterior mean", report["bayes"]))

    ana_p = out / "sigma_analytic.csv"
    if ana_p.exists():
        ana = fem.load_field(coarse, ana_p)
        report["analytic"] = rel_errors(ana)
        rows.append(("analytic reconstruction", report["analytic"]))

    if not rows:
        raise DataQualityError(f"no reconstructions found in {out}")

    _write_json(out / "compare.json", report)
    lines = ["# Reconstruction comparison", "",
             f"Mesh area: {report['mesh_area']:.6f}", ""]
    for name, err in rows:
        lines.append(f"## {name}")
        lines.append("")
        lines.append(f"- relative L2 error: {err['rel_l2']:.6f}")
        lines.append(f"- relative L1 error: {err['rel_l1']:.6f}")
        if "trusted_region_area" in err:
            lines.append(f"- trusted region area (std < "
                         f"{cfg.compare.trust_std_threshold}): "
                         f"{err['trusted_region_area']:.6f}")
        lines.append("")
    with open(out / "compare.md", "w") as fh:
        fh.write("\n".join(lines))
    print(f"compare: wrote {out / 'compare.json'}")
    return EXIT_OK


def cmd_mesh_info(cfg) -> int:
    pair = _build_meshes(cfg)
    for name, m in [("coarse", pair.coarse), ("fine", pair.fine)]:
        print(f"{name}: {m.vertex_count} vertices, {m.triangle_count} "
              f"triangles, area {m.area():.6f}, min angle "
              f"{m.min_angle_deg():.2f} deg, Gamma_1 length "
              f"{m.gamma1_arc_length():.6f}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "bayes": cmd_bayes,
    "analytic": cmd_analytic,
    "compare": cmd_compare,
    "mesh-info": cmd_mesh_info,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        _limit_threads()

    from .config import ConfigError

    try:
        cfg = _load(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from . import analytic, fem, inference, mesh

    try:
        return _COMMANDS[args.command](cfg)
    except (ConfigError, mesh.MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataQualityError, analytic.AnalyticError) as exc:
        print(f"data-quality abort: {exc}", file=sys.stderr)
        return EXIT_DATA_QUALITY
    except (fem.SolverError, inference.ChainAborted) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
