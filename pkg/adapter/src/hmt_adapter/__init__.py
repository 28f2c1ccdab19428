"""Adapter that turns multimodal documents into HMTB v1 feature bundles."""

from .extract import (
    ExtractionJob,
    ExtractionReport,
    discover_documents,
    extract,
    load_labels,
    split_sentences,
)
from .hmtb import BundleRecord, check_record, write_bundles

__all__ = [
    "ExtractionJob", "ExtractionReport", "discover_documents", "extract",
    "load_labels", "split_sentences",
    "BundleRecord", "check_record", "write_bundles",
]
