"""Desk-scale simulator and optimizer for UAV relay networks: deterministic
ray-traced air-to-ground channels inside synthetic urban scenes, a
tree-structured Parzen estimator for joint fleet-size/position search, and
disaster/robustness scenario harnesses with seeded statistics.
"""

__version__ = "0.1.0"
