"""
NormClip Example
================

Project embedding vectors radially onto the closed unit ball.
"""

import numpy as np
from ccpdml import norm_clip

v = np.array([
    [3.0, 4.0],
    [0.3, 0.4],
    [0.0, 0.0],
])

print("Inputs:")
print(v)

clipped = norm_clip(v)

print("\nClipped rows (norms at most 1):")
print(clipped)
print("Norms:", np.linalg.norm(clipped, axis=1))
