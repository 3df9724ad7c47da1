"""Simulation and verification tools for the collapsing-bond random walk."""

__version__ = "0.1.0"

from .process import (Bond, Event, JumpBlocked, JumpSuccess, ModelParams, Repair, StopCondition,
                      Trajectory, TruncationError, WalkerState, sample_positions, simulate, step,
                      total_event_rate)

__all__ = [
    "Bond", "Event", "JumpBlocked", "JumpSuccess", "ModelParams", "Repair", "StopCondition",
    "Trajectory", "TruncationError", "WalkerState", "sample_positions", "simulate", "step",
    "total_event_rate",
]
