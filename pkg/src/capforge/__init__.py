"""capforge: enhance image-caption datasets with captions from several models.

Modules:

- :mod:`capforge.dataset`      raw / enhanced records and their JSONL files
- :mod:`capforge.shear`        token counting and caption shearing
- :mod:`capforge.gateway`      caption endpoints (OpenAI-compatible HTTP, mock)
- :mod:`capforge.orchestrator` shard, caption, checkpoint, merge
- :mod:`capforge.stats`        length / word / similarity diagnostics
- :mod:`capforge.toyclip`      toy contrastive trainer and retrieval metrics
"""

from .dataset import AnnotationEntry, DatasetManifest, EnhancedEntry, GeneratedCaption, read_annotations, read_enhanced, write_enhanced
from .shear import Fallback, ShearPolicy, TokenizerSpec, compute_shear_limit, count_tokens, extract_first_clause, shear_caption

__version__ = "0.1.0"

__all__ = [
    "AnnotationEntry", "DatasetManifest", "EnhancedEntry", "Fallback", "GeneratedCaption", "ShearPolicy",
    "TokenizerSpec", "compute_shear_limit", "count_tokens", "extract_first_clause", "read_annotations",
    "read_enhanced", "shear_caption", "write_enhanced",
]
