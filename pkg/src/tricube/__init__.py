"""tricube: vectorized 3-finger in-hand cube reposing.

Batched CPU physics for a 9-joint hand plus a free cube, a goal-reaching
task with keypoint or position+quaternion pose encodings, domain
randomization, PPO training with an asymmetric actor-critic, and the
evaluation harness (ablations, robustness sweeps, threshold heatmaps,
zero-shot object transfer).
"""

__version__ = "0.1.0"
