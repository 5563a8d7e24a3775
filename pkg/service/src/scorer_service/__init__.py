"""HTTP scoring service: sum-of-token log-probabilities from a local causal LM."""

__version__ = "0.1.0"

from .app import ServiceConfig, create_app
from .model import CausalLMBackend, EmptyTargetError, PromptTooLongError
from .prompts import build_prompt, render_sentences
