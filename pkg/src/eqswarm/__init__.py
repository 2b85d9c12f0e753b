"""Equivariant swarm control on 2D particle worlds.

Pipeline: agent-centric canonical frames -> role-partitioned dense subgraphs
-> per-role attention encoders -> Gaussian actor / value critic -> action
rotated back into the world frame, trained with multi-agent PPO.
"""

__version__ = "0.1.0"
