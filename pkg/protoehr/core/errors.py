"""Exception hierarchy for ProtoEHR.

Every error raised by the library derives from ProtoEHRError and carries a
stable, machine-readable ``code`` so the CLI can report failures as a single
parseable line.

Examples:
    >>> from protoehr.core.errors import DimensionError
    >>> raise DimensionError("matmul", (2, 3), (4, 5))
    Traceback (most recent call last):
    ...
    DimensionError: [dimension_error] matmul: incompatible shapes (2, 3) and (4, 5)

Tests:
    - tests/unit/test_errors.py
"""

from __future__ import annotations

from typing import Any


class ProtoEHRError(Exception):
    """Base exception for all library errors.

    Attributes:
        code: Stable error code used in machine-readable CLI output
        message: Human-readable message
    """

    code: str = "protoehr_error"

    def __init__(self, message: str) -> None:
        """Initialize error.

        Args:
            message: Error message.
        """
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        """String representation of the error."""
        return f"[{self.code}] {self.message}"

    def to_dict(self) -> dict[str, Any]:
        """One-line JSON payload for the CLI."""
        return {"error": self.code, "message": self.message}


class DimensionError(ProtoEHRError):
    """Operand shapes are incompatible for an operation."""

    code = "dimension_error"

    def __init__(self, op: str, *shapes: tuple[int, ...]) -> None:
        rendered = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")
        self.op = op
        self.shapes = shapes


class ContractError(ProtoEHRError):
    """A precondition of an operation was violated."""

    code = "contract_error"


class ConfigError(ProtoEHRError):
    """Invalid or infeasible configuration."""

    code = "config_error"


class ParseError(ProtoEHRError):
    """Malformed record in an input file.

    Attributes:
        line: 1-based line number of the offending record (if known)
    """

    code = "parse_error"

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDatasetError(ProtoEHRError):
    """A dataset file contained no records."""

    code = "empty_dataset"


class KGLoadError(ProtoEHRError):
    """A knowledge-graph file references unknown entities or is unreadable."""

    code = "kg_load_error"


class InsufficientLabelsError(ProtoEHRError):
    """The cleaning stage found no verified positives to learn from."""

    code = "insufficient_labels"


class UndefinedMetricError(ProtoEHRError):
    """A metric is undefined for the given labels (e.g. a single class)."""

    code = "undefined_metric"


class CheckpointError(ProtoEHRError):
    """A checkpoint file is missing, truncated or inconsistent."""

    code = "checkpoint_error"


class NonFiniteLossError(ProtoEHRError):
    """Training produced a NaN or infinite loss.

    Attributes:
        epoch: Epoch index at failure
        batch: Batch index within the epoch
        param_norms: L2 norm of every parameter at failure
    """

    code = "non_finite_loss"

    def __init__(self, epoch: int, batch: int, param_norms: dict[str, float]) -> None:
        worst = sorted(param_norms.items(), key=lambda kv: -kv[1])[:5]
        report = ", ".join(f"{name}={norm:.3g}" for name, norm in worst)
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}; largest parameter norms: {report}"
        )
        self.epoch = epoch
        self.batch = batch
        self.param_norms = param_norms


class ProviderError(ProtoEHRError):
    """Error returned by a remote text-generation provider.

    Attributes:
        status_code: HTTP status code (if applicable)
        retryable: Whether the call may succeed when retried
    """

    code = "provider_error"

    def __init__(
        self,
        message: str,
        status_code: int | None = None,
        retryable: bool = False,
    ) -> None:
        super().__init__(message)
        self.status_code = status_code
        self.retryable = retryable

    def __str__(self) -> str:
        """String representation including the status code."""
        parts = [f"[{self.code}]", self.message]
        if self.status_code:
            parts.insert(1, f"({self.status_code})")
        return " ".join(parts)


class RateLimitError(ProviderError):
    """Rate limit exceeded."""

    code = "rate_limited"

    def __init__(self, retry_after: int | None = None) -> None:
        message = "Rate limit exceeded"
        if retry_after:
            message += f", retry after {retry_after}s"
        super().__init__(message, status_code=429, retryable=True)
        self.retry_after = retry_after


class AuthenticationError(ProviderError):
    """Authentication failed."""

    code = "authentication_failed"

    def __init__(self) -> None:
        super().__init__(
            "Authentication failed - check PROTOEHR_PROVIDER_KEY",
            status_code=401,
            retryable=False,
        )
