"""ProtoEHR test suite."""
