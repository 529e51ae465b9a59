"""
Greedy k-Center Example
=======================

Farthest-first traversal on a small line, compared with the exact optimum.
"""

import numpy as np
from ccpdml import covering_radius, exact_k_center, greedy_k_center

line = np.array([[0.0], [1.0], [2.0], [3.0], [10.0]])

seeded = greedy_k_center(line, [0], 1)
print("Seeded with point 0, next center:", seeded.tolist())

greedy = greedy_k_center(line, [], 2)
exact = exact_k_center(line, 2)

print("Greedy centers:", greedy.tolist(), "radius", covering_radius(line, greedy))
print("Exact centers: ", exact.tolist(), "radius", covering_radius(line, exact))
