"""Joint aspect-category sentiment analysis and review rating prediction."""

from .corpus import (
    CorpusStats,
    CurationConfig,
    CurationReport,
    Dataset,
    Review,
    compute_stats,
    curate,
    parse_review,
    read_csv,
    serialize_review,
    split,
    write_csv,
)
from .taxonomy import AspectTaxonomy, Polarity, default_taxonomy

__version__ = "0.1.0"
