"""Shared builders and brute-force reference implementations for the test suite."""
