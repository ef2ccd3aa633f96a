"""vibench: virtual shaker vibration-test bench.

Simulates stepped-sine testing of a nonlinear structure driven by an
electrodynamic exciter, with feedback cancellation of the higher
harmonics that the exciter-structure interaction injects into the
applied excitation, plus a shooting-method ground truth and an
iterative Newton/Broyden harmonization baseline for comparison.
"""

from ._engine import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
