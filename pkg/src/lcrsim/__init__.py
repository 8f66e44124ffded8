"""Follower-led future-log replication on top of a Raft-style core, plus a
deterministic discrete-event harness for exercising it at desk scale."""

__version__ = "0.1.0"
