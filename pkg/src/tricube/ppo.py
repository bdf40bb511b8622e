"""Proximal policy optimization with an asymmetric actor-critic.

The actor is a 256-256-128-128 ELU trunk with 9 outputs (action mean) and a
state-independent log-std vector; the critic is a separate 512-512-256-128
trunk on the privileged observation producing a scalar value.  Training
uses the clipped surrogate objective, generalized advantage estimation
truncated at episode boundaries, per-batch advantage normalization,
shuffled minibatch epochs, and a linearly decaying learning rate.

Log-probabilities are computed in float64 regardless of the network dtype,
so stored rollout log-probs and ratio computations do not accumulate f32
rounding.  Minibatch shuffles are drawn from counter-based streams keyed
by (seed, iteration, epoch): an interrupted and resumed run replays the
exact same update sequence.

Checkpoints are a portable container: an 8-byte magic, a little-endian
uint64 manifest length, a JSON manifest (layer shapes, hyperparameters,
global step, counters, and a tensor directory with dtype/shape/offset),
then the raw tensor bytes, little-endian, in directory order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import rng
from .nets import MLP, Adam, RunningNorm

LOG_2PI = float(np.log(2.0 * np.pi))

CHECKPOINT_MAGIC = b"TCUBCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class PPOConfig:
    gamma: float = 0.99
    gae_tau: float = 0.95
    lr_start: float = 5e-4
    lr_end: float = 1e-6
    batch_size: int = 65536
    minibatch_size: int = 16384
    epochs: int = 8
    clip_eps: float = 0.2
    entropy_coef: float = 0.0
    policy_hidden: tuple = (256, 256, 128, 128)
    value_hidden: tuple = (512, 512, 256, 128)
    log_std_init: float = 0.0
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    max_grad_norm: float = 1.0  # global-norm gradient clip; 0 disables
    normalize_obs: bool = True  # running per-dim observation normalization
    normalize_value: bool = True  # running value-target normalization

    def __post_init__(self):
        if self.batch_size % self.minibatch_size != 0:
            raise ValueError(
                f"minibatch size {self.minibatch_size} must divide batch size {self.batch_size}"
            )
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")


def clip_grad_norm(grads: list, max_norm: float) -> list:
    """Scale the whole gradient list so its global L2 norm is <= max_norm."""
    if max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(np.square(g.astype(np.float64)))) for g in grads))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return [g * scale for g in grads]


def lr_schedule(global_step: int, total_steps: int, cfg: PPOConfig) -> float:
    """Linear interpolation from lr_start at step 0 to lr_end at the end."""
    if total_steps <= 0:
        return cfg.lr_start
    frac = min(max(global_step / total_steps, 0.0), 1.0)
    # convex form hits both endpoints exactly
    return (1.0 - frac) * cfg.lr_start + frac * cfg.lr_end


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_value: np.ndarray,
    gamma: float,
    tau: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over time-major arrays (T, N).

    ``dones[t]`` marks that the transition at t ended an episode: the
    recursion and the bootstrap are cut there.  Returns float64
    (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError(
            f"shape mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}"
        )
    t_len = rewards.shape[0]
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    last = np.zeros_like(np.asarray(bootstrap_value, dtype=np.float64))
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    for t in reversed(range(t_len)):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        last = delta + gamma * tau * not_done[t] * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


class GaussianPolicy:
    """Diagonal-Gaussian torque policy: MLP mean, learned global log-std."""

    def __init__(self, obs_dim: int, action_dim: int, cfg: PPOConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.trunk = MLP(
            [obs_dim, *cfg.policy_hidden, action_dim],
            seed_words=(seed, 1),
            final_gain=0.01,
            dtype=dtype,
        )
        self.log_std = np.full(action_dim, cfg.log_std_init, dtype=dtype)

    def parameters(self) -> list[np.ndarray]:
        return self.trunk.parameters() + [self.log_std]

    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.log_std, self.cfg.log_std_min, self.cfg.log_std_max))

    def log_prob(self, actions: np.ndarray, mean: np.ndarray) -> np.ndarray:
        """Diagonal-Gaussian log density, evaluated in float64."""
        a = np.asarray(actions, dtype=np.float64)
        mu = np.asarray(mean, dtype=np.float64)
        log_sigma = np.clip(self.log_std.astype(np.float64), self.cfg.log_std_min, self.cfg.log_std_max)
        sigma = np.exp(log_sigma)
        z = (a - mu) / sigma
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_sigma) - 0.5 * self.action_dim * LOG_2PI

    def act(
        self, obs: np.ndarray, stochastic: bool = True, key: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Actions in [-1, 1] plus their log-probs.

        Stochastic sampling draws from the keyed stream; deterministic mode
        (evaluation, inference) returns the clamped mean.
        """
        obs = np.asarray(obs)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation dim {obs.shape[-1]} != {self.obs_dim}")
        mean = self.trunk(obs)
        if stochastic:
            if key is None:
                raise ValueError("stochastic act() needs a stream key")
            eps = rng.normal(key, self.action_dim)
            sample = mean + self.std() * eps
        else:
            sample = mean
        action = np.clip(sample, -1.0, 1.0)
        return action, self.log_prob(action, mean)

    def entropy(self) -> float:
        log_sigma = np.clip(self.log_std.astype(np.float64), self.cfg.log_std_min, self.cfg.log_std_max)
        return float(np.sum(log_sigma) + 0.5 * self.action_dim * (1.0 + LOG_2PI))


class ValueNet:
    def __init__(self, obs_dim: int, cfg: PPOConfig, seed: int = 0, dtype=np.float32):
        self.obs_dim = obs_dim
        self.trunk = MLP(
            [obs_dim, *cfg.value_hidden, 1], seed_words=(seed, 2), final_gain=1.0, dtype=dtype
        )

    def parameters(self) -> list[np.ndarray]:
        return self.trunk.parameters()

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return self.trunk(obs)[:, 0]


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    kl: float
    clip_fraction: float
    entropy: float
    grad_steps: int


class PPOAgent:
    """Owns the actor, the critic, their optimizers, and the update rule."""

    def __init__(
        self,
        actor_obs_dim: int,
        critic_obs_dim: int,
        action_dim: int,
        cfg: PPOConfig | None = None,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.cfg = cfg or PPOConfig()
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.policy = GaussianPolicy(actor_obs_dim, action_dim, self.cfg, seed=seed, dtype=dtype)
        self.value = ValueNet(critic_obs_dim, self.cfg, seed=seed, dtype=dtype)
        self.opt_policy = Adam(self.policy.parameters())
        self.opt_value = Adam(self.value.parameters())
        self.norm_actor = RunningNorm(actor_obs_dim)
        self.norm_critic = RunningNorm(critic_obs_dim)
        self.norm_value = RunningNorm(1)
        self.iteration = 0
        self.global_step = 0
        self.dump_dir: str | None = None  # where to drop a batch on non-finite loss

    # ------------------------------------------------------- obs/value prep

    def prep_actor_obs(self, obs: np.ndarray, update: bool = False) -> np.ndarray:
        if self.cfg.normalize_obs:
            if update:
                self.norm_actor.update(obs)
            obs = self.norm_actor.normalize(obs)
        return np.asarray(obs, dtype=self.dtype)

    def prep_critic_obs(self, obs: np.ndarray, update: bool = False) -> np.ndarray:
        if self.cfg.normalize_obs:
            if update:
                self.norm_critic.update(obs)
            obs = self.norm_critic.normalize(obs)
        return np.asarray(obs, dtype=self.dtype)

    def act(self, actor_obs: np.ndarray, stochastic: bool = False, key=None):
        """Policy actions on raw (unnormalized) observations; stats frozen."""
        return self.policy.act(self.prep_actor_obs(actor_obs), stochastic, key)

    def predict_values(self, critic_obs_prepped: np.ndarray) -> np.ndarray:
        """Value estimates on prepped observations, in return units."""
        v = self.value(critic_obs_prepped).astype(np.float64)
        if self.cfg.normalize_value:
            v = self.norm_value.denormalize(v[:, None])[:, 0]
        return v

    def value_estimate(self, critic_obs: np.ndarray) -> np.ndarray:
        return self.predict_values(self.prep_critic_obs(critic_obs))

    # ----------------------------------------------------------- losses

    def policy_loss_and_grads(
        self,
        obs: np.ndarray,
        actions: np.ndarray,
        logp_old: np.ndarray,
        advantages: np.ndarray,
    ):
        """Clipped-surrogate loss, its parameter gradients, and stats.

        The minimum of the two surrogates passes gradient through the
        probability ratio only where the unclipped branch is active (they
        tie exactly when the ratio is inside the clip range).
        """
        cfg = self.cfg
        mean, cache = self.policy.trunk.forward(obs)
        logp = self.policy.log_prob(actions, mean)
        with np.errstate(over="ignore", invalid="ignore"):
            ratio = np.exp(logp - np.asarray(logp_old, dtype=np.float64))
            adv = np.asarray(advantages, dtype=np.float64)
            surr1 = ratio * adv
            surr2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
            loss = -np.mean(np.minimum(surr1, surr2))
            entropy = self.policy.entropy()
            loss_total = loss - cfg.entropy_coef * entropy

            b = obs.shape[0]
            use_unclipped = surr1 <= surr2
            dratio = np.where(use_unclipped, -adv / b, 0.0)
            dlogp = dratio * ratio  # (B,)

        log_sigma = np.clip(
            self.policy.log_std.astype(np.float64), cfg.log_std_min, cfg.log_std_max
        )
        sigma = np.exp(log_sigma)
        diff = (np.asarray(actions, dtype=np.float64) - np.asarray(mean, dtype=np.float64)) / sigma**2
        dmean = dlogp[:, None] * diff
        dlogstd = np.sum(dlogp[:, None] * (diff * (np.asarray(actions, np.float64) - np.asarray(mean, np.float64)) - 1.0), axis=0)
        dlogstd -= cfg.entropy_coef  # d(-c * entropy)/dlog_std = -c per dim
        # gradient is blocked where the clamp on log_std is active
        at_clip = (self.policy.log_std <= cfg.log_std_min) | (self.policy.log_std >= cfg.log_std_max)
        dlogstd = np.where(at_clip, 0.0, dlogstd)

        grads, _ = self.policy.trunk.backward(cache, dmean.astype(self.dtype))
        grads = grads + [dlogstd.astype(self.dtype)]

        kl = float(np.mean(np.asarray(logp_old, dtype=np.float64) - logp))
        clip_frac = float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps))
        return float(loss_total), grads, {"kl": kl, "clip_fraction": clip_frac, "entropy": entropy}

    def value_loss_and_grads(self, obs: np.ndarray, returns: np.ndarray):
        pred, cache = self.value.trunk.forward(obs)
        pred = pred[:, 0]
        err = pred.astype(np.float64) - np.asarray(returns, dtype=np.float64)
        loss = 0.5 * float(np.mean(err * err))
        dpred = (err / obs.shape[0]).astype(self.dtype)[:, None]
        grads, _ = self.value.trunk.backward(cache, dpred)
        return loss, grads

    # ----------------------------------------------------------- update

    def update(self, batch: dict, lr: float) -> UpdateStats:
        """One PPO update: ``epochs`` sweeps of shuffled minibatches.

        ``batch`` holds flattened rollout arrays: actor_obs, critic_obs,
        actions, logp, advantages, returns.  Advantages are normalized here,
        over the whole batch.  A non-finite loss aborts the update and
        raises after dumping the batch for diagnosis.
        """
        cfg = self.cfg
        n = batch["actions"].shape[0]
        if n % cfg.minibatch_size != 0:
            raise ValueError(f"batch of {n} not divisible by minibatch {cfg.minibatch_size}")
        adv = np.asarray(batch["advantages"], dtype=np.float64)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        returns = np.asarray(batch["returns"], dtype=np.float64)
        if cfg.normalize_value:
            self.norm_value.update(returns[:, None])
            returns = self.norm_value.normalize(returns[:, None])[:, 0]

        stats = {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0, "clip_fraction": 0.0, "entropy": 0.0}
        steps = 0
        for epoch in range(cfg.epochs):
            perm = rng.permutation(
                rng.stream_key(self.seed, self.iteration, epoch, rng.CH_MINIBATCH_SHUFFLE), n
            )
            for start in range(0, n, cfg.minibatch_size):
                idx = perm[start : start + cfg.minibatch_size]
                p_loss, p_grads, p_stats = self.policy_loss_and_grads(
                    batch["actor_obs"][idx], batch["actions"][idx], batch["logp"][idx], adv[idx]
                )
                v_loss, v_grads = self.value_loss_and_grads(
                    batch["critic_obs"][idx], returns[idx]
                )
                if not (np.isfinite(p_loss) and np.isfinite(v_loss)):
                    note = ""
                    if self.dump_dir:
                        dump = os.path.join(self.dump_dir, "ppo_batch_dump.npz")
                        np.savez(dump, **{k: np.asarray(v) for k, v in batch.items()})
                        note = f"; batch dumped to {dump}"
                    raise FloatingPointError(
                        f"non-finite loss (policy={p_loss}, value={v_loss}){note}"
                    )
                p_grads = clip_grad_norm(p_grads, cfg.max_grad_norm)
                v_grads = clip_grad_norm(v_grads, cfg.max_grad_norm)
                self.opt_policy.step(self.policy.parameters(), p_grads, lr)
                self.opt_value.step(self.value.parameters(), v_grads, lr)
                steps += 1
                stats["policy_loss"] += p_loss
                stats["value_loss"] += v_loss
                stats["kl"] += p_stats["kl"]
                stats["clip_fraction"] += p_stats["clip_fraction"]
                stats["entropy"] += p_stats["entropy"]
        self.iteration += 1
        return UpdateStats(
            policy_loss=stats["policy_loss"] / steps,
            value_loss=stats["value_loss"] / steps,
            kl=stats["kl"] / steps,
            clip_fraction=stats["clip_fraction"] / steps,
            entropy=stats["entropy"] / steps,
            grad_steps=steps,
        )

    # ----------------------------------------------------------- checkpoints

    def _net_tensors(self) -> dict:
        tensors = {}
        for i, p in enumerate(self.policy.trunk.parameters()):
            tensors[f"policy.p{i}"] = p
        tensors["policy.log_std"] = self.policy.log_std
        for i, p in enumerate(self.value.trunk.parameters()):
            tensors[f"value.p{i}"] = p
        tensors.update(self.opt_policy.state_tensors("opt_policy"))
        tensors.update(self.opt_value.state_tensors("opt_value"))
        tensors.update(self.norm_actor.state_tensors("norm_actor"))
        tensors.update(self.norm_critic.state_tensors("norm_critic"))
        tensors.update(self.norm_value.state_tensors("norm_value"))
        return tensors

    def save(self, path: str, extra_tensors: dict | None = None, extra_meta: dict | None = None) -> None:
        meta = {
            "kind": "ppo_agent",
            "iteration": self.iteration,
            "global_step": self.global_step,
            "seed": self.seed,
            "actor_obs_dim": self.policy.obs_dim,
            "critic_obs_dim": self.value.obs_dim,
            "action_dim": self.policy.action_dim,
            "policy_layer_sizes": self.policy.trunk.sizes,
            "value_layer_sizes": self.value.trunk.sizes,
            "hyperparams": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in vars(self.cfg).items()
            },
        }
        if extra_meta:
            meta.update(extra_meta)
        tensors = self._net_tensors()
        if extra_tensors:
            tensors.update(extra_tensors)
        write_checkpoint(path, tensors, meta)

    def load_tensors(self, tensors: dict) -> None:
        for i, p in enumerate(self.policy.trunk.parameters()):
            p[:] = tensors[f"policy.p{i}"]
        self.policy.log_std[:] = tensors["policy.log_std"]
        for i, p in enumerate(self.value.trunk.parameters()):
            p[:] = tensors[f"value.p{i}"]
        self.opt_policy.load_state_tensors("opt_policy", tensors)
        self.opt_value.load_state_tensors("opt_value", tensors)
        self.norm_actor.load_state_tensors("norm_actor", tensors)
        self.norm_critic.load_state_tensors("norm_critic", tensors)
        self.norm_value.load_state_tensors("norm_value", tensors)

    @classmethod
    def from_checkpoint(cls, path: str, dtype=np.float32) -> tuple["PPOAgent", dict, dict]:
        tensors, meta = read_checkpoint(path)
        hp = dict(meta["hyperparams"])
        for k in ("policy_hidden", "value_hidden"):
            hp[k] = tuple(hp[k])
        agent = cls(
            meta["actor_obs_dim"],
            meta["critic_obs_dim"],
            meta["action_dim"],
            cfg=PPOConfig(**hp),
            seed=meta["seed"],
            dtype=dtype,
        )
        agent.load_tensors(tensors)
        agent.iteration = meta["iteration"]
        agent.global_step = meta["global_step"]
        return agent, tensors, meta


# ------------------------------------------------------------- container io


def write_checkpoint(path: str, tensors: dict, meta: dict) -> None:
    """Write the versioned container: magic, manifest length, JSON manifest,
    then raw little-endian tensor bytes in directory order."""
    directory = []
    offset = 0
    blobs = []
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        directory.append(
            {
                "name": name,
                "dtype": arr.dtype.newbyteorder("<").str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = dict(meta)
    manifest["format_version"] = CHECKPOINT_VERSION
    manifest["tensors"] = directory
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.array([len(mbytes)], dtype="<u8").tobytes())
        f.write(mbytes)
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)


def read_checkpoint(path: str) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        (mlen,) = np.frombuffer(f.read(8), dtype="<u8")
        manifest = json.loads(f.read(int(mlen)).decode("utf-8"))
        payload = f.read()
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {manifest.get('format_version')}")
    tensors = {}
    for entry in manifest["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    meta = {k: v for k, v in manifest.items() if k != "tensors"}
    return tensors, meta
