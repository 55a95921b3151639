"""guidedog: desensitized optimal control and closed-loop guidance.

Solves Bolza optimal control problems by Legendre-Gauss-Radau
collocation, optionally augmented with parametric-sensitivity states
and a trace penalty that desensitizes the solution, and closes the
loop with receding-horizon guidance updates.  Four method variants are
provided: OC (open-loop optimal control), DOC (open-loop desensitized),
OG (guided), and DOG (desensitized optimal guidance).
"""
from __future__ import annotations

__version__ = "0.1.0"
