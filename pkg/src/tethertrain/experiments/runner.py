"""Experiment families: orchestration, artifacts, and CSV outputs.

Each family runs per seed into its own directory (shared-nothing), writes
an echo of the config, per-update metric CSVs, stage artifacts with
hashed manifests, and a summary CSV.  A mid-run exception leaves partial
results plus a FAILED marker instead of wiping the directory.
"""

from __future__ import annotations

import hashlib
import json
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import teacher as teach
from ..adaptation import (
    RigVariant,
    StageOneArtifacts,
    UniversalLatent,
    latent_utilization_gap,
    rig_finetune,
    stage1_train,
    stage2_universal,
)
from ..envs import SwingConsts, SwingEnv, WalkerConsts, make_env_set, make_pseudo_real
from ..errors import ConfigurationError
from ..rl import (
    EncoderLatents,
    FixedLatent,
    OfflineConfig,
    PpoConfig,
    WalkerTask,
    evaluate_policy,
    pretrain_critic_offline,
)
from ..rma import (
    HistoryLatent,
    grid_to_csv,
    rma_phase1_train,
    rma_phase2_train,
    table3_grid,
)
from ..swing_pipeline import SwingRunConfig, swing_ppo_config, swing_stage1, swing_stage3
from .config import RunConfig
from .logging import MetricsLog, TeacherTelemetry

STAGE_DEFAULTS = {
    "latent_dim": 16,
    "stage1_steps": 2_000_000,
    "stage2_steps": 200_000,
    "stage3_steps": 50_000,
    "film_lr_ratio": 5.0,
    "schedule_drop": 0.02,
    "schedule_steps": 50_000,
}

WALK_VARIANTS = (
    RigVariant("finetune_z", "latent", "universal", "compliant", "schedule"),
    RigVariant("xy_fixed", "latent", "universal", "fixed", "schedule"),
    RigVariant("z_high", "latent", "universal", "compliant", "high"),
    RigVariant("z_low", "latent", "universal", "compliant", "low"),
    RigVariant("freeze_pi", "none", None, "compliant", "schedule"),
    RigVariant("finetune_residual", "residual", None, "compliant", "schedule"),
    RigVariant("freeze_pi_z", "none", "universal", "compliant", "schedule"),
    RigVariant("finetune_pi", "actor", "universal", "compliant", "schedule"),
)


def _ppo(cfg: RunConfig, **extra) -> PpoConfig:
    kw = dict(cfg.ppo)
    kw.update(extra)
    kw.setdefault("film_lr_ratio", cfg.stages.get("film_lr_ratio", STAGE_DEFAULTS["film_lr_ratio"]))
    return PpoConfig(**kw)


def _stage(cfg: RunConfig, key: str):
    return cfg.stages.get(key, STAGE_DEFAULTS[key])


def _walker_consts(cfg: RunConfig) -> WalkerConsts:
    kw = {k: v for k, v in cfg.env.items() if k not in ("n_envs", "command")}
    kw.setdefault("fixed_command", cfg.env.get("command", 0.15))
    return WalkerConsts(**kw)


def _schedule_cfg(cfg: RunConfig) -> teach.ScheduleConfig:
    return teach.ScheduleConfig(
        z_drop_total=_stage(cfg, "schedule_drop"), z_drop_steps=_stage(cfg, "schedule_steps")
    )


def _log_factory(metrics: MetricsLog, batch_size: int):
    def log(stats):
        wall = stats.get("update", 0)
        metrics.append(wall, stats.get("env_steps", (wall + 1) * batch_size), stats)

    return log


def run_experiment(cfg: RunConfig, echo=print) -> Path:
    """Dispatch one experiment family across its seeds."""
    families = {
        "full_pipeline": run_full_pipeline,
        "film_lr": film_lr_sweep,
        "walk_ablation": walk_ablation,
        "rma_grid": rma_grid,
        "swing_ablation": swing_ablation,
    }
    out_root = cfg.resolve_out_dir()
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config.json").write_text(json.dumps(cfg.raw, indent=1, sort_keys=True))
    if echo:
        echo(f"[tethertrain] experiment={cfg.experiment} hash={cfg.config_hash()} -> {out_root}")
        echo(f"[tethertrain] env config echo: {json.dumps(cfg.env, sort_keys=True)}")
    try:
        families[cfg.experiment](cfg, out_root, echo or (lambda *_: None))
    except Exception:
        (out_root / "FAILED").write_text(traceback.format_exc())
        raise
    _write_run_manifest(out_root, cfg)
    return out_root


def _write_run_manifest(out_root: Path, cfg: RunConfig):
    files = {}
    for p in sorted(out_root.rglob("*")):
        if p.is_file() and p.name not in ("run_manifest.json",):
            files[str(p.relative_to(out_root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    doc = {"config_hash": cfg.config_hash(), "files": files}
    (out_root / "run_manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# family: full pipeline (stages 1-3 on the pseudo-real rig)
# ---------------------------------------------------------------------------

def _train_stage1(cfg: RunConfig, seed: int, seed_dir: Path, conditioning="film", tag="stage1"):
    consts = _walker_consts(cfg)
    n_envs = cfg.env.get("n_envs", 64)
    env_set = make_env_set(n_envs, seed=seed, consts=consts)
    ppo = _ppo(cfg)
    fields = ["mean_step_reward", "policy_loss", "value_loss", "entropy", "episode_failures"]
    with MetricsLog(seed_dir / f"{tag}_metrics.csv", fields, cfg.config_hash(), seed) as metrics:
        artifacts = stage1_train(
            env_set,
            ppo,
            total_steps=_stage(cfg, "stage1_steps"),
            latent_dim=_stage(cfg, "latent_dim"),
            seed=seed,
            conditioning=conditioning,
            log=_log_factory(metrics, ppo.batch_size),
        )
    artifacts.save(seed_dir / tag)
    return artifacts


def run_full_pipeline(cfg: RunConfig, out_root: Path, echo):
    eval_steps = cfg.eval.get("steps", 500)
    for seed in cfg.seeds:
        seed_dir = out_root / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        echo(f"  seed {seed}: stage 1")
        artifacts = _train_stage1(cfg, seed, seed_dir)
        true_r, zero_r = latent_utilization_gap(artifacts, eval_steps=eval_steps, seed=seed)
        echo(f"  seed {seed}: gap true={true_r:.3f} zero={zero_r:.3f}")

        echo(f"  seed {seed}: stage 2")
        ppo2 = _ppo(cfg)
        with MetricsLog(seed_dir / "stage2_metrics.csv",
                        ["mean_step_reward", "latent_norm"], cfg.config_hash(), seed) as metrics:
            universal = stage2_universal(
                artifacts, ppo2, total_steps=_stage(cfg, "stage2_steps"), seed=seed,
                log=_log_factory(metrics, ppo2.batch_size),
            )
        universal.save(seed_dir / "stage2")

        echo(f"  seed {seed}: stage 3 (pseudo-real rig)")
        verified = StageOneArtifacts.load(seed_dir / "stage1", verify=True)
        schedule = _schedule_cfg(cfg)
        ppo3 = _ppo(cfg)

        def factory(seed=seed):
            return make_pseudo_real(seed=seed, consts=_walker_consts(cfg),
                                    command=cfg.env.get("command", 0.15))

        with MetricsLog(seed_dir / "stage3_metrics.csv",
                        ["phase", "mean_step_reward", "failures"], cfg.config_hash(), seed) as metrics:
            wall = {"n": 0}

            def log3(stats):
                metrics.append(wall["n"], stats.get("env_steps", 0), stats)
                wall["n"] += 1

            result = rig_finetune(
                verified.policy, factory,
                RigVariant("finetune_z", "latent", "universal", "compliant", "schedule"),
                ppo3, total_steps=_stage(cfg, "stage3_steps"), seed=seed,
                schedule_cfg=schedule, latent_vector=UniversalLatent.load(seed_dir / "stage2").vector,
                log=log3,
            )
        _write_curves_csv(seed_dir / "stage3_curves.csv", cfg, seed, result)
        summary = {
            "true_latent_reward": true_r,
            "zero_latent_reward": zero_r,
            "stage2_final_reward": universal.trace[-1]["mean_step_reward"] if universal.trace else None,
            "stage3_final_eval": result["final_eval"],
        }
        (seed_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))


def _write_curves_csv(path, cfg: RunConfig, seed: int, result: dict):
    rows = [("train", r) for r in result["train_curve"]]
    rows += [("eval", r) for r in result["eval_curve"]]
    rows.sort(key=lambda pr: pr[1]["env_steps"])
    with MetricsLog(path, ["phase", "mean_step_reward", "failures"], cfg.config_hash(), seed) as m:
        for wall, (phase, row) in enumerate(rows):
            m.append(wall, row["env_steps"], {"phase": phase, **row})


# ---------------------------------------------------------------------------
# family: film learning-rate sweep
# ---------------------------------------------------------------------------

def film_lr_sweep(cfg: RunConfig, out_root: Path, echo):
    eval_steps = cfg.eval.get("steps", 500)
    rows = []
    for ratio in cfg.film_lr_ratios:
        for seed in cfg.seeds:
            seed_dir = out_root / f"ratio_{ratio:g}" / f"seed_{seed}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            sweep_cfg = RunConfig(**{**cfg.__dict__, "stages": {**cfg.stages, "film_lr_ratio": ratio}})
            artifacts = _train_stage1(sweep_cfg, seed, seed_dir)
            true_r, zero_r = latent_utilization_gap(artifacts, eval_steps=eval_steps, seed=seed)
            train_final = float(np.mean([h["mean_step_reward"] for h in artifacts.history[-10:]]))
            rows.append({"ratio": ratio, "seed": seed, "true_latent": true_r,
                         "zero_latent": zero_r, "gap": true_r - zero_r, "train_final": train_final})
            echo(f"  ratio {ratio} seed {seed}: true={true_r:.3f} zero={zero_r:.3f}")
    _write_summary_csv(out_root / "sweep_summary.csv", cfg,
                       ["ratio", "seed", "true_latent", "zero_latent", "gap", "train_final"], rows)


def _write_summary_csv(path, cfg: RunConfig, fields, rows):
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg.config_hash()}\n")
        fh.write(",".join(fields) + "\n")
        for row in rows:
            fh.write(",".join(
                format(row[f], ".10g") if isinstance(row[f], float) else str(row[f]) for f in fields
            ) + "\n")


# ---------------------------------------------------------------------------
# family: walking ablation (the rig variant grid)
# ---------------------------------------------------------------------------

def walk_ablation(cfg: RunConfig, out_root: Path, echo):
    rows = []
    for seed in cfg.seeds:
        seed_dir = out_root / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        echo(f"  seed {seed}: pretraining film + plain policies")
        film_art = _train_stage1(cfg, seed, seed_dir, conditioning="film", tag="stage1_film")
        plain_art = _train_stage1(cfg, seed, seed_dir, conditioning="none", tag="stage1_plain")
        ppo2 = _ppo(cfg)
        universal = stage2_universal(film_art, ppo2, total_steps=_stage(cfg, "stage2_steps"), seed=seed)
        schedule = _schedule_cfg(cfg)
        ppo3 = _ppo(cfg)

        def factory(seed=seed):
            return make_pseudo_real(seed=seed, consts=_walker_consts(cfg),
                                    command=cfg.env.get("command", 0.15))

        for variant in WALK_VARIANTS:
            uses_latent = variant.latent_init == "universal"
            base_policy = film_art.policy if uses_latent else plain_art.policy
            latent = universal.vector if uses_latent else None
            echo(f"  seed {seed}: variant {variant.name}")
            result = rig_finetune(
                base_policy, factory, variant, ppo3,
                total_steps=_stage(cfg, "stage3_steps"), seed=seed,
                schedule_cfg=schedule, latent_vector=latent,
            )
            _write_curves_csv(seed_dir / f"curves_{variant.name}.csv", cfg, seed, result)
            stability = _stability_metrics(result, factory, schedule, cfg, seed)
            rows.append({"seed": seed, "variant": variant.name,
                         "final_eval": result["final_eval"],
                         "train_last": result["train_curve"][-1]["mean_step_reward"],
                         **stability})
    _write_summary_csv(
        out_root / "walk_summary.csv", cfg,
        ["seed", "variant", "final_eval", "train_last",
         "pitch_rms", "roll_rms", "force_x_rms", "force_y_rms", "force_z_rms"],
        rows,
    )


def _stability_metrics(result, factory, schedule, cfg: RunConfig, seed: int, steps: int = 300):
    """Table-1-style stability read-out at a pinned 0.15 m/s belt."""
    env = factory()
    env.consts.treadmill_active = False
    ts = teach.make_teacher(env.n, env.nominal_arm_anchor(), mode=teach.MODE_COMPLIANT)
    ts.belt_speed[:] = 0.15
    ts.pos[:, 2] = ts.anchor[:, 2] - schedule.z_drop_total
    task = WalkerTask(env, ts, schedule_cfg=schedule, reward_source="belt", schedule_active=False)
    policy = result["policy"]
    latent = result["latent"]
    if latent is not None:
        source = FixedLatent(latent)
    elif getattr(policy, "films", None) is not None:
        from ..rl import ZeroLatent

        source = ZeroLatent(policy.latent_dim)
    else:
        from ..rl import NoLatent

        source = NoLatent()
    pitches, forces = [], []
    all_idx = np.arange(env.n)
    for t in range(steps):
        z = source.per_env(all_idx)
        actions = policy.mean(task.obs, z)
        task.pre_step(t)
        obs, priv, reward, done, failed, info = task.step(actions)
        ts.belt_speed[:] = 0.15
        pitches.append(info["pitch"][0])
        forces.append(info["force"][0])
        task.obs = obs
        task.priv = priv
        task.reset_done(done)
        ts.pos[:, 2] = ts.anchor[:, 2] - schedule.z_drop_total
    pitches = np.array(pitches)
    forces = np.array(forces)
    rms = lambda x: float(np.sqrt(np.mean(np.square(x))))
    return {
        "pitch_rms": rms(pitches),
        "roll_rms": 0.0,  # planar model: roll is identically zero
        "force_x_rms": rms(forces[:, 0]),
        "force_y_rms": rms(forces[:, 1]),
        "force_z_rms": rms(forces[:, 2]),
    }


# ---------------------------------------------------------------------------
# family: RMA comparison grid
# ---------------------------------------------------------------------------

def rma_grid(cfg: RunConfig, out_root: Path, echo):
    eval_steps = cfg.eval.get("steps", 500)
    builders = {}
    store = {}
    for seed in cfg.seeds:
        seed_dir = out_root / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        echo(f"  seed {seed}: film stage 1")
        film_art = _train_stage1(cfg, seed, seed_dir, conditioning="film", tag="stage1_film")
        echo(f"  seed {seed}: concat phase 1")
        consts = _walker_consts(cfg)
        env_set = make_env_set(cfg.env.get("n_envs", 64), seed=seed, consts=consts)
        concat = rma_phase1_train(
            env_set, _ppo(cfg), total_steps=_stage(cfg, "stage1_steps"),
            latent_dim=_stage(cfg, "latent_dim"), seed=seed,
        )
        echo(f"  seed {seed}: universal latents + adaptation modules")
        ppo2 = _ppo(cfg)
        film_uni = stage2_universal(film_art, ppo2, total_steps=_stage(cfg, "stage2_steps"), seed=seed)
        concat_uni = _concat_universal(concat, ppo2, total_steps=_stage(cfg, "stage2_steps"), seed=seed)
        reg_steps = cfg.stages.get("rma_reg_steps", 1500)
        film_mod, film_trace = rma_phase2_train(
            {"policy": film_art.policy, "critic": film_art.critic,
             "encoder": film_art.encoder, "env_set": film_art.rebuild_env_set()},
            steps=reg_steps, seed=seed,
        )
        concat_mod, concat_trace = rma_phase2_train(concat, steps=reg_steps, seed=seed)
        store[seed] = dict(film_art=film_art, concat=concat, film_uni=film_uni,
                           concat_uni=concat_uni, film_mod=film_mod, concat_mod=concat_mod)
        np.savetxt(seed_dir / "film_module_loss.csv", film_trace, header="mse", comments="# ")
        np.savetxt(seed_dir / "concat_module_loss.csv", concat_trace, header="mse", comments="# ")

    def build(kind, latent_kind):
        def fn(seed):
            s = store[seed]
            if kind == "film":
                art = s["film_art"]
                policy, env_set = art.policy, art.rebuild_env_set()
                encoder = art.encoder
                uni = s["film_uni"]
                module = s["film_mod"]
            else:
                policy = s["concat"]["policy"]
                env_set = s["concat"]["env_set"]
                encoder = s["concat"]["encoder"]
                uni = s["concat_uni"]
                module = s["concat_mod"]
            if latent_kind == "ground_truth":
                source = EncoderLatents(encoder, env_set.param_matrix)
            elif latent_kind == "universal":
                source = FixedLatent(uni.vector)
            else:
                source = HistoryLatent(module, env_set.env.n, env_set.env.obs_dim, env_set.env.act_dim)
            return policy, env_set, source

        return fn

    for row in ("concat", "film"):
        for col in ("ground_truth", "adaptation_module", "universal"):
            builders[(row, col)] = build(row, col)
    grid = table3_grid({}, eval_steps, cfg.seeds, builders)
    (out_root / "grid.csv").write_text(
        f"# config_hash={cfg.config_hash()}\n" + grid_to_csv(grid)
    )
    echo("  grid written")


def _concat_universal(concat: dict, cfg_ppo: PpoConfig, total_steps: int, seed: int) -> UniversalLatent:
    """Stage-2-style shared-latent optimization through a concat policy."""
    from ..rl import PpoLearner, collect_rollout, gae
    from ..adaptation import make_walker_task

    z_bar = concat["encoder"].encode(concat["env_set"].param_matrix).mean(axis=0)
    latent = FixedLatent(z_bar.copy())
    env_set = concat["env_set"]
    fresh = make_env_set(len(env_set), seed=env_set.seed, consts=env_set.consts)
    task = make_walker_task(fresh.env)
    learner = PpoLearner(concat["policy"], concat["critic"], cfg_ppo, frozenset({"latent"}), latent)
    rng = np.random.default_rng(seed + 200)
    trace = []
    for u in range(max(1, total_steps // cfg_ppo.batch_size)):
        batch = collect_rollout(concat["policy"], concat["critic"], task, latent, cfg_ppo.batch_size, rng)
        gae(batch, cfg_ppo.gamma, cfg_ppo.lam)
        stats = learner.ppo_update(batch)
        trace.append({"update": u, "mean_step_reward": stats["mean_step_reward"],
                      "latent_norm": stats["latent_norm"]})
    return UniversalLatent(vector=latent.vector, z_bar=z_bar, trace=trace)


# ---------------------------------------------------------------------------
# family: swing ablation
# ---------------------------------------------------------------------------

SWING_VARIANTS = (
    ("helping", teach.MODE_HELPING, True),
    ("perturbing", teach.MODE_PERTURBING, True),
    ("fixed", teach.MODE_FIXED, True),
    ("helping_no_pretrain", teach.MODE_HELPING, False),
)


def swing_ablation(cfg: RunConfig, out_root: Path, echo):
    rows = []
    swing_kw = {k: v for k, v in cfg.swing.items()
                if k in ("horizon", "init_angle", "force_window")}
    dataset_size = cfg.swing.get("dataset_size", 50_000)
    stage3_steps = cfg.swing.get("stage3_steps", 300_000)
    ppo = swing_ppo_config(**cfg.ppo) if cfg.ppo else swing_ppo_config()
    for seed in cfg.seeds:
        seed_dir = out_root / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        echo(f"  seed {seed}: stage 1 (collecting {dataset_size} transitions)")
        env1 = SwingEnv(consts=SwingConsts(**swing_kw), seed=seed)
        s1 = swing_stage1(
            env1, ppo,
            SwingRunConfig(stage=1, dataset_size=dataset_size,
                           dataset_path=str(seed_dir / "offline_dataset.jsonl")),
            seed=seed,
        )
        echo(f"  seed {seed}: stage 2 (offline critic pretraining)")
        pretrained, trace = pretrain_critic_offline(
            s1["critic"].copy(), s1["dataset"],
            OfflineConfig(gamma=ppo.gamma, outer_iters=cfg.swing.get("offline_iters", 20)),
        )
        np.savetxt(seed_dir / "offline_loss.csv", trace, header="mse", comments="# ")
        for name, mode, use_pretrain in SWING_VARIANTS:
            echo(f"  seed {seed}: stage 3 variant {name}")
            env3 = SwingEnv(consts=SwingConsts(**swing_kw), seed=seed + 17)
            telemetry = None
            if cfg.telemetry:
                telemetry = TeacherTelemetry(
                    seed_dir / f"telemetry_{name}.csv", cfg.config_hash(), seed
                )
            with MetricsLog(seed_dir / f"swing_{name}.csv",
                            ["mean_step_reward", "arm_active"], cfg.config_hash(), seed) as metrics:
                out = swing_stage3(
                    env3, pretrained if use_pretrain else None, ppo,
                    SwingRunConfig(stage=3, total_steps=stage3_steps, teacher_mode=mode),
                    seed=seed, log=_log_factory(metrics, ppo.batch_size),
                    telemetry=telemetry,
                )
            if telemetry is not None:
                telemetry.close()
            third = max(1, len(out["history"]) // 3)
            rows.append({
                "seed": seed, "variant": name,
                "final_reward": out["final_reward"],
                "early_reward": float(np.mean([h["mean_step_reward"] for h in out["history"][:third]])),
            })
    _write_summary_csv(out_root / "swing_summary.csv", cfg,
                       ["seed", "variant", "final_reward", "early_reward"], rows)
