"""Swing pipeline tests: phase tracking vs ground truth, arm power signs,
stage contracts (fresh actor, critic provenance, dataset size), and the
batch bin composition."""

import numpy as np
import pytest

from tethertrain import teacher as teach
from tethertrain.envs import SwingConsts, SwingEnv
from tethertrain.rl import params_hash, pretrain_critic_offline, OfflineConfig
from tethertrain.swing_pipeline import (
    SwingRunConfig,
    measure_arm_power,
    swing_phase_tracker,
    swing_ppo_config,
    swing_stage1,
    swing_stage3,
    true_swing_phase,
)


class TestPhaseTracker:
    FS = 50.0

    def test_synthetic_sinusoid_within_tenth_radian(self):
        t = np.arange(1000) / self.FS
        rng = np.random.default_rng(0)
        for _ in range(10):
            psi = rng.uniform(0, 2 * np.pi)
            freq = rng.uniform(0.4, 1.2)
            amp = rng.uniform(0.5, 5.0)
            f = amp * np.sin(2 * np.pi * freq * t + psi)
            est = swing_phase_tracker(f, self.FS)
            want = (2 * np.pi * freq * t[-1] + psi) % (2 * np.pi)
            err = abs(float(np.angle(np.exp(1j * (est - want)))))
            assert err < 0.1

    def test_zero_history_reports_no_lock(self):
        assert swing_phase_tracker(np.zeros(1000), self.FS) is None

    def test_dc_only_reports_no_lock(self):
        assert swing_phase_tracker(np.full(1000, -33.0), self.FS) is None

    def test_tracks_simulated_swing_against_truth(self):
        consts = SwingConsts(init_angle=0.4, pose_noise=0.0)
        env = SwingEnv(consts=consts, seed=0)
        ts = teach.make_teacher(1, [0.0, 0.0, 0.0], mode=teach.MODE_FIXED)
        omega = 2 * np.pi * consts.natural_frequency()
        errs = []
        for k in range(900):
            _, _, info = env.step(np.zeros((1, 3)), ts)
            if k > 400:
                est = swing_phase_tracker(env.force_hist[0], self.FS)
                truth = true_swing_phase(info["swing_angle"][0], info["swing_rate"][0], omega)
                if est is not None:
                    errs.append(abs(float(np.angle(np.exp(1j * (est - truth))))))
        assert len(errs) > 300
        assert np.median(errs) < 0.3

    def test_helping_arm_leads_the_swing(self):
        # cross-correlation between arm stroke and swing angle must peak
        # with the arm a quarter period ahead
        consts = SwingConsts(init_angle=0.4, pose_noise=0.0)
        env = SwingEnv(consts=consts, seed=1)
        ts = teach.make_teacher(1, [0.0, 0.0, 0.0], mode=teach.MODE_HELPING)
        from tethertrain.rl import SwingTask

        task = SwingTask(env, ts, phase_tracker=swing_phase_tracker)
        arm, angle = [], []
        for k in range(900):
            task.set_mode_sequence(np.full(1, teach.MODE_HELPING, dtype=np.int8))
            task.pre_step(0)
            _, _, _, done, _, info = task.step(np.zeros((1, 3)))
            if k > 300:
                arm.append(info["arm_x"][0])
                angle.append(info["swing_angle"][0])
        arm = np.array(arm) - np.mean(arm)
        angle = np.array(angle) - np.mean(angle)
        period = 1.0 / SwingConsts().natural_frequency() / 0.02  # in steps
        lags = np.arange(-int(period), int(period))
        # xc[l] pairs arm(t) with angle(t + l): a positive peak lag means
        # the swing angle reproduces the arm's stroke l steps later
        xc = [np.mean(arm[max(0, -l) : len(arm) - max(0, l)] * angle[max(0, l) : len(angle) - max(0, -l)]) for l in lags]
        best = lags[int(np.argmax(xc))]
        # arm ~ cos(phase), angle ~ sin(phase): the arm leads by a quarter period
        assert 0.1 * period < best < 0.4 * period


class TestArmPower:
    def test_helping_injects_positive_power(self):
        assert measure_arm_power(teach.MODE_HELPING, steps=1200, seed=0) > 0.0

    def test_perturbing_extracts_power(self):
        assert measure_arm_power(teach.MODE_PERTURBING, steps=1200, seed=0) < 0.0

    def test_fixed_arm_is_passive(self):
        p = measure_arm_power(teach.MODE_FIXED, steps=1200, seed=0)
        helping = measure_arm_power(teach.MODE_HELPING, steps=1200, seed=0)
        assert abs(p) < 0.2 * abs(helping)


class TestStages:
    def test_default_dataset_size_is_fifty_thousand(self):
        assert SwingRunConfig().dataset_size == 50_000

    def test_stage1_collects_exactly_the_configured_dataset(self, tmp_path):
        env = SwingEnv(consts=SwingConsts(horizon=200), seed=0)
        cfg = swing_ppo_config(batch_size=256, epochs=2)
        run_cfg = SwingRunConfig(stage=1, dataset_size=1024, dataset_path=str(tmp_path / "d.jsonl"))
        out = swing_stage1(env, cfg, run_cfg, seed=0)
        assert len(out["dataset"]) == 1024
        from tethertrain.rl import load_transitions

        loaded = load_transitions(tmp_path / "d.jsonl")
        assert len(loaded) == 1024
        for a, b in zip(out["dataset"][:10], loaded[:10]):
            np.testing.assert_array_equal(a.obs, b.obs)

    def test_stage3_fresh_actor_and_critic_provenance(self):
        env = SwingEnv(consts=SwingConsts(horizon=200), seed=0)
        cfg = swing_ppo_config(batch_size=256, epochs=2)
        s1 = swing_stage1(env, cfg, SwingRunConfig(stage=1, dataset_size=512), seed=0)
        critic, _ = pretrain_critic_offline(
            s1["critic"].copy(), s1["dataset"], OfflineConfig(outer_iters=2, epochs_per_iter=2)
        )
        pre_hash = params_hash(critic)
        env3 = SwingEnv(consts=SwingConsts(horizon=200), seed=1)
        out = swing_stage3(
            env3, critic, cfg, SwingRunConfig(stage=3, total_steps=512), seed=1
        )
        assert out["critic_hash_at_load"] == pre_hash
        assert out["actor_hash"] != params_hash(s1["policy"])

    def test_stage3_bin_modes_follow_schedule_inside_active_window(self):
        env = SwingEnv(consts=SwingConsts(horizon=100), seed=0)
        cfg = swing_ppo_config(batch_size=200, epochs=1)
        run_cfg = SwingRunConfig(stage=3, total_steps=1800, teacher_mode=teach.MODE_HELPING,
                                 active_window=(1 / 3, 2 / 3))
        logged = []
        out = swing_stage3(env, None, cfg, run_cfg, seed=0, log=lambda s: logged.append(s))
        actives = [s["arm_active"] for s in out["history"]]
        # 9 updates, active in the middle third only
        assert actives == [False, False, False, True, True, True, False, False, False]
