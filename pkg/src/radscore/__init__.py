"""radscore: evaluation harness for multimodal-LLM descriptions of CT findings."""

__version__ = "0.1.0"
