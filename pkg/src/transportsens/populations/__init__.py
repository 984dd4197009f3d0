"""Bundled discrete-population definitions (JSON) for exact verification."""
