"""Per-module unit tests."""
