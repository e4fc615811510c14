"""Index localization on discrete torus-fibred models.

Validates compatible fibrations, assembles Witten-deformed Dirac operators on
2-D model manifolds, computes their graded indices, and counts
Bohr-Sommerfeld points on locally toric bases.
"""

__version__ = "0.1.0"
