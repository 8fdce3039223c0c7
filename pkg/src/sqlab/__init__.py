"""sqlab: a seeded simulation lab for adaptive statistical-query attacks.

The lab builds collusion-resilient binary codes, wraps their challenge
columns in single-bit encryption, drives adaptive recovery/attack games
against pluggable answer oracles, and turns every claimed guarantee into
a repeatable seeded experiment.
"""

__version__ = "0.1.0"
