"""Unit tests. Run from the repository root (see test.sh) so `src` imports as a package."""
