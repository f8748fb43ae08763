"""Weakly-supervised temporal action localization with motion-graph guidance.

Desk-scale pipeline: synthetic two-stream corpus generation, a two-branch
snippet classifier trained with a motion-guided loss, proposal inference,
and mAP/KL evaluation with the ablation matrix wired through one CLI.
"""

__version__ = "0.1.0"
