"""Training-free multi-character storyboard consistency at desk scale.

Bounded intra- and cross-frame self-attention with a dropout bias, cross-frame
token merging with a timestep schedule, layout planning, and a toy denoising
harness that measures attention leakage and cross-frame consistency.
"""

__version__ = "0.1.0"
