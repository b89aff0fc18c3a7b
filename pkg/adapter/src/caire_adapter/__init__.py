"""Reference adapter bridging real models to the caire engine: embedding
extraction into kb-format/1 and a protocol-conformant /v1/score server."""

from .encoders import HashEncoder, SiglipEncoder, encoder_from_spec
from .extract import ExtractionJob, ExtractionReport, extract_embeddings
from .judges import DeterministicJudge, HFJudge, judge_from_spec
from .server import create_app, serve

__version__ = "0.1.0"
