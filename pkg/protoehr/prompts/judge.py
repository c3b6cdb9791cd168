"""Triplet validation prompt templates.

The judge labels a subset of candidate triplets; a classifier trained on
those labels scores the rest.

Examples:
    >>> from protoehr.prompts.judge import get_prompt
    >>> prompt = get_prompt("Type 2 diabetes is treated with Metformin")
"""

SYSTEM_PROMPT = """You are a clinical fact checker reviewing statements proposed for a
medical knowledge graph.

A statement is VALID when it is a generally accepted clinical fact, for example:
- "Sepsis is treated with broad-spectrum antibiotics"
- "Hip replacement is performed for osteoarthritis of the hip"

A statement is INVALID when it is false, unsupported, too vague to be useful, or
describes mere coincidence rather than a clinical relationship.

Respond with a JSON object only."""

USER_PROMPT_TEMPLATE = """Statement: "{statement}"

Respond with valid JSON matching this schema:
{{
  "valid": boolean
}}"""


def get_prompt(statement: str) -> str:
    """Get the user prompt for judging a statement."""
    return USER_PROMPT_TEMPLATE.format(statement=statement)


def get_system_prompt() -> str:
    return SYSTEM_PROMPT
