"""Information bottleneck, noisy lossy source coding and oblivious relaying.

Numerical solvers for the information bottleneck and noisy rate-distortion
problems, Poisson functional representation coding, prefix codes, executable
one-shot/block schemes and closed-form bound evaluators.
"""

from .prob import Alphabet, JointPmf, Kernel, Pmf

__all__ = ["Alphabet", "JointPmf", "Kernel", "Pmf"]
__version__ = "0.1.0"
