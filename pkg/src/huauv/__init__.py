"""Hybrid aerial-underwater vehicle simulator and closed-loop RRT planner."""
