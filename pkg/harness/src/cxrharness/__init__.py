"""Training harness over preprocessed chest X-ray corpora.

Consumes the preprocessing tool's manifest CSVs and image directories,
trains a multi-label diagnostic classifier and a frozen-encoder
demographic head, and emits prediction CSVs in the schema the
preprocessing tool's `eval` command consumes.  This package talks to
that tool only through those file formats; it never imports it.
"""
__version__ = "0.1.0"
