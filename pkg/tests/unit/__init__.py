"""Unit tests - fast tests with no API calls."""
