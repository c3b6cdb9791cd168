"""Prompt templates for the HTTP provider roles.

Each module provides the system and user prompts for one KG pipeline stage.

Examples:
    >>> from protoehr.prompts import suggester
    >>> prompt = suggester.get_prompt("DX001", "Diagnosis", "RX004", "Medication")
"""

from protoehr.prompts import judge, splitter, suggester

__all__ = ["judge", "splitter", "suggester"]
