"""The 6-DoF cube reposing task.

Observation layouts (all offsets pinned by tests):

* actor, ``keypoints`` variant (75): joint positions (9), joint velocities
  (9), cube keypoints (24), goal keypoints (24), last commanded torque (9).
* actor, ``pos_quat`` variant (41): the two 24-wide keypoint blocks are
  replaced by 7-dim pose blocks (translation + xyzw quaternion).
* critic (147 / 113): the actor layout built from noise-free state, then
  object velocity (6), fingertip poses (21), fingertip velocities (18),
  fingertip contact wrenches (18), applied joint torques (9).

The actor sees the world through the camera model: the noised cube pose
refreshes every ``camera_repeat`` policy steps and is held in between,
while proprioception refreshes every step.  Pose noise is applied in the
world frame before any keypoint conversion.  The simulated tracker also
reports an arbitrary quaternion sign at each refresh; the ``pos_quat``
observation path runs the sign filter to stay temporally consistent, the
keypoint path does not need it.  The critic always reads the true
simulator state.

Reward is ``w_fo * reach * 1(total steps <= cutoff) + w_fv * vel_penalty +
w_og * goal_reward`` where ``goal_reward`` is either the sum over the 8
corners of the logistic kernel of keypoint distance, or the
position-kernel-plus-inverse-angle form; components are reported raw so
the weighted sum reconstructs the total exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import domrand, physics, rng, spatial
from .domrand import DRConfig
from .physics import N_JOINTS, EnvParams, PhysicsConfig
from .spatial import KernelParams

OBS_VARIANTS = ("keypoints", "pos_quat")
SUCCESS_ROT_22_DEG = np.deg2rad(22.0)


@dataclass
class TaskConfig:
    episode_length: int = 750  # 15 s at 50 Hz
    success_pos_threshold: float = 0.02
    success_rot_threshold: float = float(SUCCESS_ROT_22_DEG)
    w_fingertip_reach: float = -750.0
    w_fingertip_vel: float = -0.5
    w_object_goal: float = 40.0
    kernel_keypoints: KernelParams = field(default_factory=lambda: KernelParams(a=30.0, b=2.0))
    kernel_pos: KernelParams = field(default_factory=lambda: KernelParams(a=50.0, b=2.0))
    reach_cutoff_steps: float = 5e7  # aggregate env steps
    obs_variant: str = "keypoints"
    reward_variant: str = "keypoints"
    goal_radius: float = 0.15
    goal_z_max: float = 0.25
    goal_yaw_only: bool = False
    camera_repeat: int = 5
    camera_sign_flips: bool = True
    spawn_disc_radius: float = 0.03
    joint_reset_noise: float = 0.02
    log_episodes: bool = True
    # observed/reward keypoints come from this box; None derives it from the
    # physics object.  Zero-shot transfer pins it to the training cube.
    keypoint_half_extents: tuple | None = None

    def __post_init__(self):
        if self.episode_length <= 0:
            raise ValueError("episode_length must be > 0")
        if self.success_pos_threshold <= 0 or self.success_rot_threshold <= 0:
            raise ValueError("success thresholds must be > 0")
        for v in (self.obs_variant, self.reward_variant):
            if v not in OBS_VARIANTS:
                raise ValueError(f"unknown variant {v!r}, expected one of {OBS_VARIANTS}")


def pose_block_width(variant: str) -> int:
    return 24 if variant == "keypoints" else 7


def actor_layout(variant: str) -> dict:
    """Block name -> (start, end) offsets of the actor observation."""
    w = pose_block_width(variant)
    blocks = {}
    off = 0
    for name, width in [
        ("joint_pos", N_JOINTS),
        ("joint_vel", N_JOINTS),
        ("cube_pose", w),
        ("goal_pose", w),
        ("last_action", N_JOINTS),
    ]:
        blocks[name] = (off, off + width)
        off += width
    return blocks


def actor_obs_dim(variant: str) -> int:
    return max(end for _, end in actor_layout(variant).values())


def critic_layout(variant: str) -> dict:
    base = actor_obs_dim(variant)
    blocks = {"actor": (0, base)}
    off = base
    for name, width in [
        ("cube_vel", 6),
        ("fingertip_pose", 21),
        ("fingertip_vel", 18),
        ("fingertip_wrench", 18),
        ("joint_torque", N_JOINTS),
    ]:
        blocks[name] = (off, off + width)
        off += width
    return blocks


def critic_obs_dim(variant: str) -> int:
    return max(end for _, end in critic_layout(variant).values())


# ------------------------------------------------------------------ pure ops


def process_action(
    raw_action: np.ndarray, joint_vel: np.ndarray, pcfg: PhysicsConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Map policy outputs in [-1, 1] to commanded torques.

    Scale to the torque range, apply velocity-proportional safety damping,
    clamp.  Non-finite actions become zero torque and flag the env.
    Returns (torques (N, 9), fault (N,)).
    """
    raw = np.asarray(raw_action, dtype=np.float64)
    fault = ~np.isfinite(raw).all(axis=-1)
    raw = np.where(fault[..., None], 0.0, raw)
    tau = np.clip(raw, -1.0, 1.0) * pcfg.hand.max_torque
    damp = 1.0 - pcfg.safety_damping_coef * np.abs(joint_vel) / pcfg.hand.max_joint_vel
    tau = tau * np.maximum(damp, 0.0)
    return np.clip(tau, -pcfg.hand.max_torque, pcfg.hand.max_torque), fault


def fingertip_to_object(
    prev_tips: np.ndarray, prev_obj_pos: np.ndarray, tips: np.ndarray, obj_pos: np.ndarray
) -> np.ndarray:
    """Per-step change of summed fingertip-to-object-centroid distance;
    negative while the fingertips approach."""
    d_now = np.linalg.norm(tips - obj_pos[:, None, :], axis=-1).sum(axis=-1)
    d_prev = np.linalg.norm(prev_tips - prev_obj_pos[:, None, :], axis=-1).sum(axis=-1)
    return d_now - d_prev


def object_goal_reward(
    obj_pos: np.ndarray,
    obj_quat: np.ndarray,
    goal_pos: np.ndarray,
    goal_quat: np.ndarray,
    cfg: TaskConfig,
    local_keypoints: np.ndarray,
) -> np.ndarray:
    """Pose-tracking reward (unweighted), per-env."""
    if cfg.reward_variant == "keypoints":
        kp_cur = spatial.transform_keypoints(obj_pos, obj_quat, local_keypoints)
        kp_goal = spatial.transform_keypoints(goal_pos, goal_quat, local_keypoints)
        dist = np.linalg.norm(kp_cur - kp_goal, axis=-1)
        return spatial.logistic_kernel(dist, cfg.kernel_keypoints).sum(axis=-1)
    pos_err = np.linalg.norm(obj_pos - goal_pos, axis=-1)
    ang = spatial.rot_dist(obj_quat, goal_quat)
    return spatial.logistic_kernel(pos_err, cfg.kernel_pos) + 1.0 / (3.0 * np.abs(ang) + 0.01)


def check_success(
    obj_pos: np.ndarray,
    obj_quat: np.ndarray,
    goal_pos: np.ndarray,
    goal_quat: np.ndarray,
    pos_threshold: float,
    rot_threshold: float,
) -> np.ndarray:
    pos_err = np.linalg.norm(obj_pos - goal_pos, axis=-1)
    rot_err = spatial.rot_dist(obj_quat, goal_quat)
    return (pos_err < pos_threshold) & (rot_err < rot_threshold)


def sample_goals(
    seed: int, env_ids: np.ndarray, episode_idx: np.ndarray, cfg: TaskConfig, z_min: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Goal poses: position uniform over a cylinder (area-uniform in the
    disc), orientation uniform over SO(3), or yaw-only when configured."""
    key_p = rng.stream_key(seed, env_ids, episode_idx, rng.CH_GOAL_POS)
    u = rng.uniform(key_p, 3)
    r = cfg.goal_radius * np.sqrt(u[:, 0])
    theta = 2.0 * np.pi * u[:, 1]
    z = z_min + (cfg.goal_z_max - z_min) * u[:, 2]
    pos = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=-1)

    key_q = rng.stream_key(seed, env_ids, episode_idx, rng.CH_GOAL_ROT)
    if cfg.goal_yaw_only:
        yaw = rng.uniform(key_q, 1, 0.0, 2.0 * np.pi)[:, 0]
        quat = spatial.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    else:
        quat = spatial.quat_from_shoemake(rng.uniform(key_q, 3))
    return pos, quat


class CubeReposeTask:
    """Vectorized environment batch with auto-reset.

    All randomness is drawn from counter-based streams keyed by the run
    seed, env index, and either the per-env episode index (resets, episode
    randomization) or the per-env step counter (per-step noise), so replays
    and partitioned batches are bit-identical.
    """

    def __init__(
        self,
        num_envs: int,
        seed: int = 0,
        task: TaskConfig | None = None,
        phys: PhysicsConfig | None = None,
        dr: DRConfig | None = None,
    ):
        self.num_envs = num_envs
        self.seed = seed
        self.cfg = task or TaskConfig()
        self.pcfg = phys or PhysicsConfig()
        self.dr = dr or DRConfig()
        self.action_dim = N_JOINTS
        self.actor_dim = actor_obs_dim(self.cfg.obs_variant)
        self.critic_dim = critic_obs_dim(self.cfg.obs_variant)
        # observations and reward always use the nominal-size corner points
        if self.cfg.keypoint_half_extents is not None:
            kp_half = np.asarray(self.cfg.keypoint_half_extents, dtype=np.float64)
        elif self.pcfg.object.kind == "box":
            kp_half = np.asarray(self.pcfg.object.half_extents)
        else:
            kp_half = np.full(3, self.pcfg.object.radius)
        self.local_keypoints = spatial.box_local_keypoints(kp_half)

        n = num_envs
        self.params = EnvParams.nominal(n)
        self.state = physics.make_rest_state(n, self.pcfg, self.params)
        self.goal_pos = np.zeros((n, 3))
        self.goal_quat = np.tile(spatial.QUAT_IDENTITY, (n, 1))
        self.episode_step = np.zeros(n, dtype=np.int64)
        self.episode_idx = np.full(n, -1, dtype=np.int64)
        self.last_action_torque = np.zeros((n, N_JOINTS))
        self.held_cube_pos = np.zeros((n, 3))
        self.held_cube_quat = np.tile(spatial.QUAT_IDENTITY, (n, 1))
        self.filtered_cube_quat = np.tile(spatial.QUAT_IDENTITY, (n, 1))
        self.episode_return = np.zeros(n)
        self.success_any = np.zeros(n, dtype=bool)
        self.goal_block = np.zeros((n, pose_block_width(self.cfg.obs_variant)))
        self.total_steps = 0  # aggregate env steps, drives the reach curriculum
        self._episode_records: list[dict] = []
        self._env_ids = np.arange(n)
        self._kin = None  # fingertip kinematics cache for the current state

    # ------------------------------------------------------------- resets

    def reset_all(self) -> dict:
        self._reset_envs(np.ones(self.num_envs, dtype=bool))
        return self._observations()

    def _reset_envs(self, mask: np.ndarray) -> None:
        ids = np.nonzero(mask)[0]
        if len(ids) == 0:
            return
        self.episode_idx[ids] += 1
        ep = self.episode_idx[ids]

        new_params = domrand.sample_episode_randomization(self.seed, ids, ep, self.dr)
        for name in vars(self.params):
            getattr(self.params, name)[ids] = getattr(new_params, name)

        rest = physics.make_rest_state(len(ids), self.pcfg, new_params)
        key = rng.stream_key(self.seed, ids, ep, rng.CH_RESET_CUBE)
        u = rng.uniform(key, 3)
        r = self.cfg.spawn_disc_radius * np.sqrt(u[:, 0])
        theta = 2.0 * np.pi * u[:, 1]
        rest.obj_pos[:, 0] = r * np.cos(theta)
        rest.obj_pos[:, 1] = r * np.sin(theta)
        yaw = 2.0 * np.pi * u[:, 2]
        rest.obj_quat[:] = spatial.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)

        key_j = rng.stream_key(self.seed, ids, ep, rng.CH_RESET_JOINTS)
        jitter = rng.normal(key_j, N_JOINTS) * self.cfg.joint_reset_noise
        rest.joint_pos[:] = np.clip(
            rest.joint_pos + jitter, self.pcfg.hand.joint_lower, self.pcfg.hand.joint_upper
        )
        rest.step_count[:] = self.state.step_count[ids]  # survives across episodes

        for name in vars(self.state):
            getattr(self.state, name)[ids] = getattr(rest, name)

        z_min = physics.object_half_extents(self.pcfg, self.params)[ids, 2]
        gp, gq = sample_goals(self.seed, ids, ep, self.cfg, z_min)
        self.goal_pos[ids] = gp
        self.goal_quat[ids] = gq
        self.goal_block[ids] = self._pose_blocks(gp, gq)

        self.episode_step[ids] = 0
        self.last_action_torque[ids] = 0.0
        self.episode_return[ids] = 0.0
        self.success_any[ids] = False
        self._kin = None
        self._refresh_camera(ids)
        # first frame of an episode: the filter has no history, take it raw
        self.filtered_cube_quat[ids] = self.held_cube_quat[ids]

    # ------------------------------------------------------------- camera

    def camera_delay_observe(self) -> tuple[np.ndarray, np.ndarray]:
        """The actor-visible cube pose: held between camera frames, noised
        in the world frame at each refresh."""
        return self.held_cube_pos, (
            self.filtered_cube_quat if self.cfg.obs_variant == "pos_quat" else self.held_cube_quat
        )

    def _refresh_camera(self, ids: np.ndarray) -> None:
        pos = self.state.obj_pos[ids]
        quat = self.state.obj_quat[ids]
        if self.dr.enabled:
            key = rng.stream_key(self.seed, ids, self.state.step_count[ids], rng.CH_OBS_NOISE)
            pos = domrand.apply_observation_noise(
                pos, self.dr.cube_position, self.params.cube_pos_offset[ids], key
            )
            quat = domrand.apply_orientation_noise(
                quat,
                self.dr.cube_orientation,
                self.params.cube_rot_offset[ids],
                rng.stream_key(self.seed, ids, self.state.step_count[ids], rng.CH_OBS_NOISE_CUBE_ROT),
            )
        if self.cfg.camera_sign_flips:
            # the tracker solves each frame from scratch: its sign is arbitrary
            key_s = rng.stream_key(
                self.seed, ids, self.state.step_count[ids], rng.CH_CAMERA_SIGN
            )
            flip = rng.uniform(key_s, 1)[:, 0] < 0.5
            quat = np.where(flip[:, None], -quat, quat)
        self.held_cube_pos[ids] = pos
        self.held_cube_quat[ids] = quat
        self.filtered_cube_quat[ids] = spatial.quat_sign_filter(
            quat, self.filtered_cube_quat[ids]
        )

    # ------------------------------------------------------------- stepping

    def step(self, actions: np.ndarray) -> tuple[dict, np.ndarray, np.ndarray, dict]:
        n = self.num_envs
        if self._kin is None:
            self._kin = physics.fingertip_kinematics(self.state.joint_pos, self.state.joint_vel, self.pcfg.hand)
        prev_tips = self._kin.pos
        prev_obj_pos = self.state.obj_pos.copy()

        torque_cmd, action_fault = process_action(actions, self.state.joint_vel, self.pcfg)
        self.last_action_torque = torque_cmd
        torque_applied = torque_cmd
        if self.dr.enabled:
            key = rng.stream_key(
                self.seed, self._env_ids, self.state.step_count, rng.CH_ACT_NOISE
            )
            torque_applied = domrand.apply_action_noise(
                torque_cmd, self.dr.torque, self.params.torque_offset, key
            )
            if self.dr.external_force_enabled:
                physics.apply_external_force(
                    self.state, self.params, self.pcfg, self.dr.external_force, self.seed
                )

        self.state = physics.step(self.state, torque_applied, self.params, self.pcfg)
        self.total_steps += n
        self.episode_step += 1
        kin = physics.fingertip_kinematics(self.state.joint_pos, self.state.joint_vel, self.pcfg.hand)
        self._kin = kin

        reach_raw = fingertip_to_object(prev_tips, prev_obj_pos, kin.pos, self.state.obj_pos)
        reach = reach_raw if self.total_steps <= self.cfg.reach_cutoff_steps else np.zeros(n)
        vel_pen = np.sum(kin.linvel**2, axis=(-1, -2))
        goal_rew = object_goal_reward(
            self.state.obj_pos, self.state.obj_quat, self.goal_pos, self.goal_quat,
            self.cfg, self.local_keypoints,
        )
        reward = (
            self.cfg.w_fingertip_reach * reach
            + self.cfg.w_fingertip_vel * vel_pen
            + self.cfg.w_object_goal * goal_rew
        )
        self.episode_return += reward

        pos_err = np.linalg.norm(self.state.obj_pos - self.goal_pos, axis=-1)
        rot_err = spatial.rot_dist(self.state.obj_quat, self.goal_quat)
        in_goal = (pos_err < self.cfg.success_pos_threshold) & (
            rot_err < self.cfg.success_rot_threshold
        )
        self.success_any |= in_goal

        fault = self.state.fault | action_fault
        done = (self.episode_step >= self.cfg.episode_length) | fault
        if done.any() and self.cfg.log_episodes:
            for i in np.nonzero(done)[0]:
                self._episode_records.append(
                    {
                        "episode": int(self.episode_idx[i]),
                        "env_id": int(i),
                        "success": bool(in_goal[i] and not fault[i]),
                        "success_any": bool(self.success_any[i]),
                        "final_pos_err": float(pos_err[i]),
                        "final_rot_err": float(rot_err[i]),
                        "return": float(self.episode_return[i]),
                        "fault": bool(fault[i]),
                    }
                )
        info = {
            "reward_components": {
                "fingertip_to_object": reach,
                "fingertip_velocity_penalty": vel_pen,
                "object_goal_reward": goal_rew,
            },
            "success_now": in_goal,
            "pos_err": pos_err,
            "rot_err": rot_err,
        }

        if done.any():
            self._reset_envs(done)
        live_refresh = (~done) & (self.episode_step % self.cfg.camera_repeat == 0)
        if live_refresh.any():
            self._refresh_camera(np.nonzero(live_refresh)[0])

        return self._observations(), reward, done, info

    # --------------------------------------------------------- observations

    def _pose_blocks(self, pos: np.ndarray, quat: np.ndarray) -> np.ndarray:
        if self.cfg.obs_variant == "keypoints":
            return spatial.keypoints_to_flat(
                spatial.transform_keypoints(pos, quat, self.local_keypoints)
            )
        return np.concatenate([pos, quat], axis=-1)

    def _observations(self) -> dict:
        n = self.num_envs
        if self._kin is None:
            self._kin = physics.fingertip_kinematics(self.state.joint_pos, self.state.joint_vel, self.pcfg.hand)
        kin = self._kin

        joint_pos = self.state.joint_pos
        joint_vel = self.state.joint_vel
        if self.dr.enabled:
            key = rng.stream_key(
                self.seed, self._env_ids, self.state.step_count, rng.CH_OBS_NOISE_JOINT_POS
            )
            joint_pos = domrand.apply_observation_noise(
                joint_pos, self.dr.joint_position, self.params.joint_pos_offset, key
            )
            key = rng.stream_key(
                self.seed, self._env_ids, self.state.step_count, rng.CH_OBS_NOISE_JOINT_VEL
            )
            joint_vel = domrand.apply_observation_noise(
                joint_vel, self.dr.joint_velocity, self.params.joint_vel_offset, key
            )

        cam_pos, cam_quat = self.camera_delay_observe()
        goal_block = self.goal_block
        actor = np.concatenate(
            [joint_pos, joint_vel, self._pose_blocks(cam_pos, cam_quat), goal_block,
             self.last_action_torque],
            axis=-1,
        )

        actor_true = np.concatenate(
            [self.state.joint_pos, self.state.joint_vel,
             self._pose_blocks(self.state.obj_pos, self.state.obj_quat), goal_block,
             self.last_action_torque],
            axis=-1,
        )
        critic = np.concatenate(
            [
                actor_true,
                self.state.obj_linvel,
                self.state.obj_angvel,
                np.concatenate([kin.pos, kin.quat], axis=-1).reshape(n, 21),
                np.concatenate([kin.linvel, kin.angvel], axis=-1).reshape(n, 18),
                self.state.fingertip_wrench.reshape(n, 18),
                self.state.joint_torque,
            ],
            axis=-1,
        )
        return {"actor": actor, "critic": critic}

    # ------------------------------------------------------------- plumbing

    def drain_episode_records(self) -> list[dict]:
        out = self._episode_records
        self._episode_records = []
        return out

    def state_dict(self) -> dict:
        arrays = {}
        for prefix, obj in (("state", self.state), ("params", self.params)):
            for name, arr in vars(obj).items():
                arrays[f"{prefix}.{name}"] = arr.copy()
        for name in (
            "goal_pos", "goal_quat", "goal_block", "episode_step", "episode_idx",
            "last_action_torque", "held_cube_pos", "held_cube_quat",
            "filtered_cube_quat", "episode_return", "success_any",
        ):
            arrays[f"task.{name}"] = getattr(self, name).copy()
        arrays["task.total_steps"] = np.array([self.total_steps], dtype=np.int64)
        return arrays

    def load_state_dict(self, arrays: dict) -> None:
        for prefix, obj in (("state", self.state), ("params", self.params)):
            for name in vars(obj):
                getattr(obj, name)[:] = arrays[f"{prefix}.{name}"]
        for name in (
            "goal_pos", "goal_quat", "goal_block", "episode_step", "episode_idx",
            "last_action_torque", "held_cube_pos", "held_cube_quat",
            "filtered_cube_quat", "episode_return", "success_any",
        ):
            getattr(self, name)[:] = arrays[f"task.{name}"]
        self.total_steps = int(arrays["task.total_steps"][0])
        self._kin = None
