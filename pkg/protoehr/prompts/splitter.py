"""Relation-cluster splitting prompt templates.

Clustering by embedding distance can merge phrases with opposite meanings
("is treated with" and "is not treated with"). The splitter separates them.

Examples:
    >>> from protoehr.prompts.splitter import get_prompt
    >>> prompt = get_prompt(["treats", "does not treat"])
"""

import json

SYSTEM_PROMPT = """You are curating relation names in a medical knowledge graph.

You receive a group of relation phrases that were clustered as near-synonyms.
Split the group into subgroups so that phrases within a subgroup mean the same thing
and never contradict each other. Negated, opposite or incompatible phrases belong to
different subgroups. Keep the group whole if it is already consistent.

Every input phrase must appear in exactly one subgroup, spelled exactly as given.
Respond with a JSON object only."""

USER_PROMPT_TEMPLATE = """Relation phrases:
{phrases}

Respond with valid JSON matching this schema:
{{
  "groups": [["phrase", ...], ...]
}}"""


def get_prompt(relations: list[str]) -> str:
    """Get the user prompt for one relation cluster."""
    return USER_PROMPT_TEMPLATE.format(phrases=json.dumps(relations, ensure_ascii=False))


def get_system_prompt() -> str:
    return SYSTEM_PROMPT
