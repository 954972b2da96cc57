"""Desk-scale teleoperation stack for a simulated 6-DOF arm.

Clutched operator poses stream in over a reliable channel, pass through
frame remapping, low-pass filtering, virtual fences and budgeted inverse
kinematics, and leave as rate-limited joint commands on a high-rate
datagram channel. A simulated arm and a tensile-tester emulator close the
loop for lab-task replays and latency measurements.
"""

from . import core
from .geometry import Pose, Twist, compose, delta, inverse
from .kinematics import ArmModel, JointState, forward, jacobian, load_arm, manipulability

__version__ = "0.1.0"

__all__ = [
    "ArmModel",
    "JointState",
    "Pose",
    "Twist",
    "compose",
    "core",
    "delta",
    "forward",
    "inverse",
    "jacobian",
    "load_arm",
    "manipulability",
    "__version__",
]
