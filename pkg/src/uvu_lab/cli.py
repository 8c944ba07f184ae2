"""Command-line orchestration: dataset generation, training, analysis, and
verification, with reproducible per-seed run directories.

Layout: <out_dir>/<experiment_id>/<seed>/ holds the config manifest, the
dataset, checkpoints, metrics, and analysis outputs.  Identical configs
produce bit-identical datasets, checkpoints, and delimited outputs.

Exit codes: 0 ok, 1 validation error, 2 training divergence, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import envs, evaluation, net, reporting, train, verify
from .config import ConfigError, RunConfig, load_config, save_config
from .net import MlpSpec, PracticalArchSpec
from .train import DivergenceError, TrainConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2
EXIT_VERIFICATION = 3


def _worker_count(n_jobs: int) -> int:
    cap = os.environ.get("UVU_LAB_THREADS")
    if cap is None:
        return 1
    return max(1, min(int(cap), n_jobs))


def _dataset_path(run_dir: str) -> str:
    return os.path.join(run_dir, "dataset.txt")


def _train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        learning_rate=t.learning_rate,
        batch_size=t.batch_size,
        n_steps=t.n_steps,
        discount=t.discount,
        target_update_interval=t.target_update_interval,
        target_polyak=t.target_polyak,
        seed=seed,
        use_float32=t.use_float32,
    )


def _practical_arch(cfg: RunConfig, n_heads: int = 1) -> PracticalArchSpec:
    return PracticalArchSpec(
        state_dim=envs.GridWorld.OBS_DIM,
        task_dim=envs.N_DOOR_COLORS,
        embed_width=cfg.model.embed_width,
        trunk_widths=tuple(cfg.model.trunk_widths),
        n_actions=len(envs.GRID_ACTIONS),
        n_heads=n_heads,
    )


def _chain_spec(cfg: RunConfig, mdp) -> MlpSpec:
    return MlpSpec(
        input_dim=envs.chain_input_dim(mdp),
        hidden_widths=tuple(cfg.model.hidden_widths),
        n_heads=cfg.model.n_heads,
        sigma_w=cfg.model.sigma_w,
        sigma_b=cfg.model.sigma_b,
    )


def _make_env(cfg: RunConfig, seed: int):
    if cfg.env.kind == "chain":
        return envs.make_chain(cfg.env.n_states, cfg.env.discount, cfg.env.divergence_state)
    return envs.make_gridworld(cfg.env.max_size, seed=seed, episode_len=cfg.env.episode_len)


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, force: bool = False) -> str:
    run_dir = reporting.ensure_dir(cfg.run_dir())
    path = _dataset_path(run_dir)
    if os.path.exists(path) and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")
    save_config(cfg, os.path.join(run_dir, "config.json"))
    if cfg.env.kind == "chain":
        mdp = _make_env(cfg, cfg.seed)
        policy = envs.ChainPolicy(z=cfg.data.policy_z)
        ds = envs.rollout_chain(mdp, policy, cfg.data.n_episodes, seed=cfg.seed)
    else:
        env = _make_env(cfg, cfg.seed)
        ccfg = TrainConfig(
            learning_rate=cfg.data.collect_lr,
            batch_size=128,
            n_steps=cfg.data.n_steps,
            discount=cfg.train.discount,
            seed=cfg.seed,
            use_float32=cfg.train.use_float32,
        )
        agent = train.OnlineDqnAgent(_practical_arch(cfg), ccfg, seed=cfg.seed + 1)
        ds = envs.collect_gridworld_dataset(env, agent, n_steps=cfg.data.n_steps, seed=cfg.seed)
    envs.save_dataset(ds, path)
    return path


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _save_params(run_dir: str, name: str, params, manifest: dict):
    reporting.save_checkpoint(params, manifest, os.path.join(run_dir, name))


def _train_one_seed(cfg: RunConfig, seed: int) -> str:
    run_dir = reporting.ensure_dir(cfg.run_dir(seed))
    ds_path = _dataset_path(run_dir)
    if not os.path.exists(ds_path):
        base = cfg.run_dir()
        if os.path.exists(_dataset_path(base)):
            ds_path = _dataset_path(base)
        else:
            raise ConfigError(f"no dataset at {ds_path}; run gen-data first")
    dataset = envs.load_dataset(ds_path)
    save_config(replace(cfg, seed=seed), os.path.join(run_dir, "config.json"))
    tcfg = _train_config(cfg, seed)
    method = cfg.train.method
    metrics: list = []
    if cfg.env.kind == "chain":
        _train_chain_method(cfg, method, dataset, tcfg, run_dir, metrics, seed)
    else:
        _train_grid_method(cfg, method, dataset, tcfg, run_dir, metrics, seed)
    reporting.write_metrics_csv(metrics, os.path.join(run_dir, "metrics.csv"))
    reporting.render_metrics_figure(metrics, os.path.join(run_dir, "metrics.png"), title=f"{method} loss")
    return run_dir


def _mlp_manifest(spec: MlpSpec, role: str, extra: dict | None = None) -> dict:
    doc = {
        "kind": "mlp",
        "role": role,
        "input_dim": spec.input_dim,
        "hidden_widths": list(spec.hidden_widths),
        "n_heads": spec.n_heads,
        "nonlinearity": spec.nonlinearity,
        "sigma_w": spec.sigma_w,
        "sigma_b": spec.sigma_b,
        "parametrization": spec.parametrization,
        "init": spec.init,
    }
    doc.update(extra or {})
    return doc


def _arch_manifest(arch: PracticalArchSpec, role: str, extra: dict | None = None) -> dict:
    doc = {
        "kind": "practical",
        "role": role,
        "state_dim": arch.state_dim,
        "task_dim": arch.task_dim,
        "embed_width": arch.embed_width,
        "trunk_widths": list(arch.trunk_widths),
        "n_actions": arch.n_actions,
        "n_heads": arch.n_heads,
    }
    doc.update(extra or {})
    return doc


def _train_chain_method(cfg, method, dataset, tcfg, run_dir, metrics, seed):
    mdp = _make_env(cfg, seed)
    spec = _chain_spec(cfg, mdp)
    z_values = list(np.linspace(0.0, 1.0, 6))
    x, xp_sampler, gamma_vec = train._chain_product_inputs(mdp, dataset, z_values)
    scfg = replace(
        tcfg, learning_rate=0.2, batch_size=None, optimizer="sgd", convergence_tol=0.0, use_float32=False
    )
    if method == "uvu":
        model = train.init_uvu_model(spec, mdp.discount, seed)
        train.uvu_train(
            model, x, xp_sampler(np.random.default_rng(seed)), gamma_vec, scfg,
            xp_sampler=xp_sampler, metrics=metrics,
        )
        _save_params(run_dir, "uvu_online", model.online.values, _mlp_manifest(spec, "vartheta", {"discount": mdp.discount}))
        _save_params(run_dir, "uvu_target", model.target.values, _mlp_manifest(spec, "psi", {"discount": mdp.discount}))
    elif method in ("ensemble", "bdqnp"):
        single = spec.single_head()
        prior_scale = cfg.train.prior_scale if method == "bdqnp" else 0.0
        model = train.init_ensemble(single, cfg.train.ensemble_size, seed, prior_scale=prior_scale)
        losses = train.ensemble_train(
            model, x, xp_sampler(np.random.default_rng(seed)), np.zeros(x.shape[0]), gamma_vec, scfg, xp_sampler=xp_sampler
        )
        metrics.extend((i, l) for i, l in enumerate(losses[0]) if i % 50 == 0)
        for k, member in enumerate(model.members):
            _save_params(run_dir, f"member_{k}", member.values, _mlp_manifest(single, "theta", {"member": k}))
            if model.priors is not None:
                _save_params(
                    run_dir, f"prior_{k}", model.priors[k].values,
                    _mlp_manifest(single, "psi", {"member": k, "prior_scale": prior_scale}),
                )
    elif method in ("rnd", "rnd_p"):
        model = train.init_rnd_model(spec, seed)
        train.rnd_train(model, x, scfg, metrics=metrics)
        _save_params(run_dir, "rnd_predictor", model.predictor.values, _mlp_manifest(spec, "rnd_predictor"))
        _save_params(run_dir, "rnd_target", model.target.values, _mlp_manifest(spec, "rnd_target"))
        if method == "rnd_p":
            z_grid = np.linspace(0.0, 1.0, 6)
            values = train.chain_rnd_prior_heatmap(
                mdp, dataset, z_grid, spec, replace(scfg, learning_rate=0.1, n_steps=4000), seed
            )
            np.save(os.path.join(run_dir, "propagated_values.npy"), values)
    else:
        raise ConfigError(f"method {method!r} is not available on the chain environment")


def _train_grid_method(cfg, method, dataset, tcfg, run_dir, metrics, seed):
    arch = _practical_arch(cfg)
    if method == "dqn":
        learner = train.dqn_offline_train(dataset, arch, tcfg, metrics)
        _save_params(run_dir, "q", learner.params, _arch_manifest(arch, "theta"))
    elif method == "uvu":
        model = train.uvu_offline_train(dataset, arch, tcfg, n_heads=cfg.model.n_heads, metrics=metrics)
        _save_params(run_dir, "q", model.q.params, _arch_manifest(arch, "theta"))
        u_arch = replace(arch, n_heads=cfg.model.n_heads)
        _save_params(run_dir, "uvu_online", model.u_params, _arch_manifest(u_arch, "vartheta"))
        _save_params(run_dir, "uvu_target", model.g_params, _arch_manifest(u_arch, "psi"))
    elif method in ("ensemble", "bdqnp"):
        prior_scale = cfg.train.prior_scale if method == "bdqnp" else 0.0
        model = train.bdqnp_offline_train(dataset, arch, tcfg, cfg.train.ensemble_size, prior_scale, metrics)
        for k, member in enumerate(model.members):
            _save_params(run_dir, f"member_{k}", member.params, _arch_manifest(arch, "theta", {"member": k}))
            _save_params(run_dir, f"prior_{k}", model.priors[k], _arch_manifest(arch, "psi", {"member": k, "prior_scale": prior_scale}))
    elif method in ("rnd", "rnd_p"):
        model = train.rnd_offline_train(
            dataset, arch, tcfg, n_heads=cfg.model.n_heads, with_prior=(method == "rnd_p"), metrics=metrics
        )
        r_arch = replace(arch, n_heads=cfg.model.n_heads)
        _save_params(run_dir, "q", model.q.params, _arch_manifest(arch, "theta"))
        _save_params(run_dir, "rnd_predictor", model.predictor, _arch_manifest(r_arch, "rnd_predictor"))
        _save_params(run_dir, "rnd_target", model.rnd_target, _arch_manifest(r_arch, "rnd_target"))
        if model.intrinsic is not None:
            _save_params(run_dir, "q_intrinsic", model.intrinsic.params, _arch_manifest(arch, "theta"))
    else:
        raise ConfigError(f"unknown training method {method!r}")


def cmd_train(cfg: RunConfig, seeds: list[int] | None = None) -> list[str]:
    seeds = seeds or [cfg.seed]
    workers = _worker_count(len(seeds))
    if workers == 1 or len(seeds) == 1:
        return [_train_one_seed(cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_one_seed, [cfg] * len(seeds), seeds))


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _load_mlp(run_dir: str, name: str):
    params, doc = reporting.load_checkpoint(os.path.join(run_dir, name))
    spec = MlpSpec(
        input_dim=doc["input_dim"],
        hidden_widths=tuple(doc["hidden_widths"]),
        n_heads=doc["n_heads"],
        nonlinearity=doc["nonlinearity"],
        sigma_w=doc["sigma_w"],
        sigma_b=doc["sigma_b"],
        parametrization=doc["parametrization"],
        init=doc["init"],
    )
    return params, spec, doc


def cmd_analyze(cfg: RunConfig) -> dict:
    run_dir = cfg.run_dir()
    if not os.path.isdir(run_dir):
        raise ConfigError(f"run directory {run_dir} does not exist; train first")
    if cfg.env.kind == "chain":
        return _analyze_chain(cfg, run_dir)
    return _analyze_grid(cfg, run_dir)


def _analyze_chain(cfg: RunConfig, run_dir: str) -> dict:
    mdp = _make_env(cfg, cfg.seed)
    z_values = np.linspace(0.0, 1.0, 6)
    xq, n_s, n_z = train._chain_query_inputs(mdp, z_values)
    method = cfg.train.method
    if method == "uvu":
        online, spec, _ = _load_mlp(run_dir, "uvu_online")
        target, _, _ = _load_mlp(run_dir, "uvu_target")
        model = train.UvuModel(spec, net.ParamVector(online, "vartheta"), net.ParamVector(target, "psi"), mdp.discount)
        _, half = train.uvu_error(model, xq)
        values = half.reshape(n_s, n_z)
    elif method in ("ensemble", "bdqnp"):
        members = []
        k = 0
        while os.path.exists(os.path.join(run_dir, f"member_{k}.npy")):
            params, spec, doc = _load_mlp(run_dir, f"member_{k}")
            out = net.forward(spec, params, xq)[:, 0]
            if os.path.exists(os.path.join(run_dir, f"prior_{k}.npy")):
                prior, pspec, pdoc = _load_mlp(run_dir, f"prior_{k}")
                out = out + pdoc.get("prior_scale", 0.0) * net.forward(pspec, prior, xq)[:, 0]
            members.append(out)
            k += 1
        if not members:
            raise ConfigError(f"no member checkpoints in {run_dir}")
        values = np.stack(members).var(axis=0, ddof=1).reshape(n_s, n_z)
    elif method in ("rnd", "rnd_p"):
        pred, spec, _ = _load_mlp(run_dir, "rnd_predictor")
        tgt, _, _ = _load_mlp(run_dir, "rnd_target")
        model = train.RndModel(spec, net.ParamVector(pred, "rnd_predictor"), net.ParamVector(tgt, "rnd_target"))
        values = train.rnd_error(model, xq).reshape(n_s, n_z)
        prop_path = os.path.join(run_dir, "propagated_values.npy")
        if method == "rnd_p" and os.path.exists(prop_path):
            values = np.load(prop_path)
    else:
        raise ConfigError(f"no chain analysis for method {method!r}")
    hm = evaluation.HeatmapGrid(z_values=z_values, states=np.arange(n_s), values=np.maximum(values, 0.0))
    reporting.write_heatmap_csv(hm, os.path.join(run_dir, "heatmap.csv"))
    reporting.render_heatmap_figure({method: hm}, os.path.join(run_dir, "heatmap.png"), title=f"chain uncertainty ({method})")
    doc = {"method": method, "max_value": float(hm.values.max())}
    with open(os.path.join(run_dir, "analysis.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def _load_grid_model(cfg: RunConfig, run_dir: str):
    method = cfg.train.method
    arch = _practical_arch(cfg)
    tcfg = _train_config(cfg, cfg.seed)
    if method == "dqn":
        learner = train.init_dqn(arch, tcfg, 0)
        learner.params, _ = reporting.load_checkpoint(os.path.join(run_dir, "q"))
        return learner, None
    if method == "uvu":
        q = train.init_dqn(arch, tcfg, 0)
        q.params, _ = reporting.load_checkpoint(os.path.join(run_dir, "q"))
        u_arch = replace(arch, n_heads=cfg.model.n_heads)
        u_params, _ = reporting.load_checkpoint(os.path.join(run_dir, "uvu_online"))
        g_params, _ = reporting.load_checkpoint(os.path.join(run_dir, "uvu_target"))
        model = train.UvuPracticalModel(
            q=q, u_arch=u_arch, u_params=u_params, u_target=u_params.copy(), g_params=g_params,
            u_adam=train.AdamState.like(u_params),
        )
        return model, model.uncertainty
    if method in ("ensemble", "bdqnp"):
        members, priors = [], []
        k = 0
        while os.path.exists(os.path.join(run_dir, f"member_{k}.npy")):
            learner = train.init_dqn(arch, tcfg, 0)
            learner.params, _ = reporting.load_checkpoint(os.path.join(run_dir, f"member_{k}"))
            members.append(learner)
            prior, doc = reporting.load_checkpoint(os.path.join(run_dir, f"prior_{k}"))
            priors.append(prior)
            k += 1
        if not members:
            raise ConfigError(f"no member checkpoints in {run_dir}")
        scale = cfg.train.prior_scale if method == "bdqnp" else 0.0
        model = train.BdqnpModel(members=members, priors=priors, prior_scale=scale, arch=arch)
        return model, model.uncertainty
    if method in ("rnd", "rnd_p"):
        q = train.init_dqn(arch, tcfg, 0)
        q.params, _ = reporting.load_checkpoint(os.path.join(run_dir, "q"))
        r_arch = replace(arch, n_heads=cfg.model.n_heads)
        pred, _ = reporting.load_checkpoint(os.path.join(run_dir, "rnd_predictor"))
        tgt, _ = reporting.load_checkpoint(os.path.join(run_dir, "rnd_target"))
        model = train.RndPracticalModel(q=q, r_arch=r_arch, predictor=pred, rnd_target=tgt, adam=train.AdamState.like(pred))
        intr_path = os.path.join(run_dir, "q_intrinsic.npy")
        if os.path.exists(intr_path):
            intr = train.init_dqn(arch, tcfg, 0)
            intr.params, _ = reporting.load_checkpoint(os.path.join(run_dir, "q_intrinsic"))
            model.intrinsic = intr
        return model, model.uncertainty
    raise ConfigError(f"no grid analysis for method {method!r}")


def _analyze_grid(cfg: RunConfig, run_dir: str) -> dict:
    model, unc = _load_grid_model(cfg, run_dir)
    env = _make_env(cfg, cfg.seed + 500)
    n_episodes = 40
    summary = evaluation.run_task_rejection(model, unc, env, n_episodes, seed=cfg.seed + 900)
    env = _make_env(cfg, cfg.seed + 500)
    random_summary = evaluation.run_task_rejection(model, None, env, n_episodes, seed=cfg.seed + 900)
    summaries = {cfg.train.method: summary, "random_rejection": random_summary}
    rows = [
        {"method": name, "size": cfg.env.max_size, "seed": cfg.seed, "return": float(v)}
        for name, s in summaries.items()
        for v in s.values
    ]
    reporting.write_rejection_csv(rows, os.path.join(run_dir, "rejection.csv"))
    reporting.write_rejection_summary(summaries, os.path.join(run_dir, "rejection.json"))
    reporting.render_rejection_figure(
        summaries, os.path.join(run_dir, "rejection.png"), title=f"task rejection (size {cfg.env.max_size})"
    )
    return {name: s.mean for name, s in summaries.items()}


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(suite: str, out_path: str | None = None) -> bool:
    results = verify.run_suite(suite)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    report = {
        "suite": suite,
        "passed": ok,
        "checks": [
            {"name": r.name, "passed": r.passed, "details": r.details, "metrics": r.metrics} for r in results
        ],
    }
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return ok


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uvu-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("gen-data", "train", "analyze"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if name == "train":
            p.add_argument("--seeds", default=None, help="comma-separated seed replicas")

    v = sub.add_parser("verify")
    v.add_argument("--suite", default="all", help="kernels|theorem1|corollaries|reductions|tabular|all")
    v.add_argument("--out", default=None, help="write a JSON report here")
    return parser


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            ok = cmd_verify(args.suite, args.out)
            return EXIT_OK if ok else EXIT_VERIFICATION
        cfg = _load_cfg(args)
        if args.command == "gen-data":
            path = cmd_gen_data(cfg, force=args.force)
            print(f"wrote {path}")
        elif args.command == "train":
            seeds = [int(s) for s in args.seeds.split(",")] if getattr(args, "seeds", None) else None
            for run_dir in cmd_train(cfg, seeds):
                print(f"trained {run_dir}")
        elif args.command == "analyze":
            doc = cmd_analyze(cfg)
            print(json.dumps(doc, indent=2, sort_keys=True))
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
