"""labloop: closed-loop orchestration of bench protocols.

Pipeline: protocol text -> subtask plan (protocol) -> per-subtask
readiness check, execution and completion check (orchestrator +
verification + executor) against a predicate world model (world), with
retrieval-grounded prompts (knowledge), retry/reorder/escalation
scheduling, curriculum visual augmentation (augmentation) and run
metrics (metrics). The CLI and HTTP service live in cli/service.
"""

__version__ = "0.1.0"
