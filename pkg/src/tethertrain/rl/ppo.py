"""Clipped PPO with hand-derived gradients and trainable-group masks.

Every stage of the adaptation pipeline is this same learner with a
different mask over {actor, film, encoder, critic, latent}: joint
pretraining trains the first four, universal-latent optimization trains
only the latent, rig fine-tuning trains the latent plus a fresh critic.
Parameters outside the mask are never touched, bitwise.

Gradient path for the policy loss, per sample i with ratio rho_i and
normalized advantage A_i:

    dL/dlogp_i = -(A_i * rho_i) / B   if the unclipped branch is active
                 0                    otherwise (clip region)
    dlogp/dmean = (a - m) / sigma^2
    dlogp/dlog_std = ((a - m)/sigma)^2 - 1

and the entropy bonus contributes -entropy_coef to every log_std
coordinate.  The mean's gradient backpropagates through the (film-)MLP
to the weights and, when needed, to the latent and the encoder.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, TrainingError
from ..nn import AdamState, GradientTape, adam_step, backward
from .latents import EncoderLatents, FixedLatent, NoLatent
from .policies import gaussian_entropy, gaussian_log_prob
from .types import PpoConfig, RolloutBatch

VALID_GROUPS = frozenset({"actor", "film", "encoder", "critic", "latent"})


def ppo_losses(policy, critic, obs, priv, actions, logp_old, adv, returns, z, cfg: PpoConfig):
    """Pure loss evaluation (no gradients), used by tests and diagnostics."""
    mean = policy.mean(obs, z)
    logp = gaussian_log_prob(actions, mean, policy.log_std)
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
    v = critic.value(priv)
    value_loss = float(np.mean((v - returns) ** 2))
    entropy = gaussian_entropy(policy.log_std)
    return policy_loss, value_loss, entropy


class PpoLearner:
    def __init__(self, policy, critic, cfg: PpoConfig, mask, latent_source, rng=None):
        bad = set(mask) - VALID_GROUPS
        if bad:
            raise ConfigurationError(f"unknown trainable groups {sorted(bad)}")
        if "film" in mask and policy.films is None:
            raise ConfigurationError("mask includes film but the policy has no film layers")
        if "encoder" in mask and not isinstance(latent_source, EncoderLatents):
            raise ConfigurationError("mask includes encoder but the latent source has none")
        if "latent" in mask and not isinstance(latent_source, FixedLatent):
            raise ConfigurationError("mask includes latent but the latent source is not a FixedLatent")
        self.policy = policy
        self.critic = critic
        self.cfg = cfg
        self.mask = frozenset(mask)
        self.latent_source = latent_source
        self.rng = rng or np.random.default_rng(0)
        self.opt = {
            "actor": AdamState(cfg.actor_lr),
            "film": AdamState(cfg.actor_lr * cfg.film_lr_ratio),
            "encoder": AdamState(cfg.encoder_lr if cfg.encoder_lr is not None else cfg.actor_lr),
            "critic": AdamState(cfg.critic_lr),
            "latent": AdamState(cfg.latent_lr),
        }
        self.update_count = 0

    # ------------------------------------------------------------------

    def _latents(self, env_ids, enc_tape=None):
        src = self.latent_source
        if isinstance(src, NoLatent):
            return None
        if isinstance(src, EncoderLatents) and enc_tape is not None:
            return src.encoder.encode(src.mu[env_ids], tape=enc_tape)
        return src.per_env(env_ids)

    def ppo_update(self, batch: RolloutBatch) -> dict:
        cfg = self.cfg
        if batch.advantages is None:
            raise ConfigurationError("run gae() before ppo_update()")
        B = batch.size
        obs = batch.flat("obs")
        priv = batch.flat("priv")
        actions = batch.flat("actions")
        logp_old = batch.flat("log_probs")
        adv = batch.flat("advantages").copy()
        returns = batch.flat("returns")
        env_ids = batch.flat("env_index")
        if cfg.center_adv_per_env and batch.n_envs > 1:
            per_env_mean = batch.advantages.mean(axis=0)
            adv = (batch.advantages - per_env_mean[None, :]).reshape(-1)
        if cfg.normalize_adv:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        needs_policy_grads = bool(self.mask & {"actor", "film", "encoder", "latent"})
        stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0, "approx_kl": 0.0}

        for _ in range(cfg.epochs):
            enc_tape = GradientTape() if "encoder" in self.mask else None
            z = self._latents(env_ids, enc_tape)
            tape = GradientTape() if needs_policy_grads else None
            mean = self.policy.mean(obs, z, tape=tape)
            log_std = self.policy.log_std
            logp = gaussian_log_prob(actions, mean, log_std)
            ratio = np.exp(logp - logp_old)
            unclipped = ratio * adv
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
            policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
            active = unclipped <= clipped  # gradient flows only here
            glogp = np.where(active, -(adv * ratio) / B, 0.0)

            v_probe = self.critic.value(priv)
            probe_loss = float(np.mean((v_probe - returns) ** 2))
            if not np.isfinite(policy_loss) or not np.isfinite(probe_loss):
                snap = {
                    "reward_mean": float(batch.rewards.mean()),
                    "reward_max": float(batch.rewards.max()),
                    "adv_absmax": float(np.max(np.abs(adv))),
                    "value_absmax": float(np.max(np.abs(batch.values))),
                    "ratio_max": float(np.max(ratio)),
                }
                raise TrainingError(f"non-finite PPO loss; batch stats: {snap}")

            if needs_policy_grads:
                inv_var = np.exp(-2.0 * log_std)
                diff = actions - mean
                dmean = glogp[:, None] * diff * inv_var
                grads = self.policy.backward(tape, dmean)
                if "actor" in self.mask:
                    dlog_std = np.sum(glogp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
                    dlog_std -= cfg.entropy_coef
                    actor_grads = {
                        k: v for k, v in grads.items() if k[0] in "wb" and not k.startswith("film")
                    }
                    actor_grads["log_std"] = dlog_std
                    params = self.policy.params()
                    adam_step(self.opt["actor"], params, actor_grads)
                    np.clip(log_std, cfg.log_std_min, cfg.log_std_max, out=log_std)
                if "film" in self.mask:
                    film_grads = {k: v for k, v in grads.items() if k.startswith("film")}
                    adam_step(self.opt["film"], self.policy.params(), film_grads)
                if "encoder" in self.mask:
                    enc_grads = backward(enc_tape, grads["z"])
                    enc_grads = {k: v for k, v in enc_grads.items() if k[0] in "wb"}
                    adam_step(self.opt["encoder"], self.latent_source.encoder.net.params(), enc_grads)
                if "latent" in self.mask:
                    dz = grads["z"].sum(axis=0)
                    adam_step(self.opt["latent"], {"z": self.latent_source.vector}, {"z": dz})

            vtape = GradientTape() if "critic" in self.mask else None
            v = self.critic.value(priv, tape=vtape)
            verr = v - returns
            value_loss = float(np.mean(verr * verr))
            if "critic" in self.mask:
                cgrads = self.critic.backward(vtape, 2.0 * verr / B)
                cgrads = {k: g for k, g in cgrads.items() if k != "_input"}
                adam_step(self.opt["critic"], self.critic.params(), cgrads)

            stats["policy_loss"] += policy_loss / cfg.epochs
            stats["value_loss"] += value_loss / cfg.epochs
            stats["entropy"] += gaussian_entropy(log_std) / cfg.epochs
            stats["clip_frac"] += float(np.mean(~active)) / cfg.epochs
            stats["approx_kl"] += float(np.mean(logp_old - logp)) / cfg.epochs

        self.update_count += 1
        if batch.episode_returns:
            stats["mean_episode_return"] = float(np.mean(batch.episode_returns))
        stats["mean_step_reward"] = float(batch.rewards.mean())
        stats["episode_failures"] = batch.episode_failures
        if isinstance(self.latent_source, FixedLatent):
            stats["latent_norm"] = float(np.linalg.norm(self.latent_source.vector))
        return stats
