"""Automated research pipeline for longitudinal education survey data:
five agent roles coordinated by a checkpointed state machine, with a
domain-knowledge registry, deterministic data preparation, metric and
fairness evaluation, sandboxed execution with self-repair, citation
verification, and template-based manuscript assembly. Runs fully offline
against synthetic fixtures via the scripted backend."""

__version__ = "0.1.0"
