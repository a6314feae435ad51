"""Safe manipulator control stack: deterministic kinematic simulation, a
high-frequency safety shield based on capsule reachability, and a
goal-conditioned RL environment with a hindsight-replay training loop."""

__version__ = "0.1.0"
