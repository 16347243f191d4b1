"""Uplink NOMA-IoT resource allocation with tabular SARSA and a numpy DQN."""

__version__ = "0.1.0"
