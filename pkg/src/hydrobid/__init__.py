"""Day-ahead hydropower bidding toolkit.

Forecast prices and inflows with noise-driven recurrent networks, assemble the
two-stage day-ahead bidding program for a river cascade, solve it with a
multi-cut L-shaped method on top of a bundled bounded-variable simplex, and
wrap the whole thing in a sequential sample-average-approximation loop that
reports VRP, EEV and VSS confidence intervals.
"""

__version__ = "0.1.0"
