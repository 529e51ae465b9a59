"""
Retrieval Metrics Example
=========================

P@1, P@R and MAP@R of a small two-class embedding.
"""

import numpy as np
from ccpdml import evaluate, map_at_r, violation_rate

embeddings = np.array([
    [0.00, 0.00],
    [0.10, 0.00],
    [0.45, 0.00],
    [0.50, 0.05],
    [0.60, 0.00],
])
labels = np.array([0, 0, 0, 1, 1])

print("MAP@R of ranking [A, B, A] for query A with R = 2:", map_at_r(["A", "B", "A"], "A", 2))

report = evaluate(embeddings, labels)
print("P@1   =", report.p_at_1)
print("P@R   =", report.p_at_r)
print("MAP@R =", report.map_at_r)
print("Violation rate at beta = 0.3:", violation_rate(embeddings, labels, 0.3))
