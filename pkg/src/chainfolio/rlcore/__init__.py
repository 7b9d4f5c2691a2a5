"""Self-contained deep Q-learning machinery (numpy, float64, seeded).

Small convolutional Q-networks with hand-written backprop, a FIFO replay
buffer, epsilon-greedy action selection, and the TD(0) training step with
a target network.  Everything is deterministic under a fixed seed.
"""

from .network import QNetwork, Tensor3, build_qnetwork, q_values
from .replay import ReplayBuffer, Transition
from .training import (
    DivergenceError,
    TrainConfig,
    epsilon_at,
    epsilon_greedy,
    sync_target,
    train_step,
)
from .container import (
    ChecksumMismatchError,
    ContainerFormatError,
    UnsupportedVersionError,
    load_network,
    read_container,
    save_network,
    write_container,
)

__all__ = [
    "QNetwork",
    "Tensor3",
    "build_qnetwork",
    "q_values",
    "ReplayBuffer",
    "Transition",
    "TrainConfig",
    "DivergenceError",
    "epsilon_at",
    "epsilon_greedy",
    "sync_target",
    "train_step",
    "read_container",
    "write_container",
    "save_network",
    "load_network",
    "ContainerFormatError",
    "ChecksumMismatchError",
    "UnsupportedVersionError",
]
