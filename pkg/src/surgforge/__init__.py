"""surgforge: deterministic curation of hierarchical clip-caption datasets
from narrated procedure videos, plus desk-scale contrastive training and
recognition metrics behind pluggable model backends."""

__version__ = "0.1.0"
