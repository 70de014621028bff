"""Self-hosted retrieval-augmented help-desk engine.

Ingests a Markdown documentation corpus into a chunked, embedded,
hot-swappable vector index and answers user questions over a streaming
chat API with guardrail filtering, conversation condensing, MMR
retrieval, and citation-backed generation.
"""

__version__ = "0.1.0"
