"""RareScale test suite."""
