"""Integration tests - component tests with mocked or real APIs."""
