"""Desk-scale multimodal story-to-image generation with cross-modal refinement
and LLM-prompted layout grounding."""

__version__ = "0.1.0"
