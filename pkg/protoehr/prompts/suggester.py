"""Relation suggestion prompt templates.

The suggester proposes the clinical relation, if any, between two codes.

Examples:
    >>> from protoehr.prompts.suggester import get_prompt, SYSTEM_PROMPT
    >>> prompt = get_prompt("Type 2 diabetes", "Diagnosis", "Metformin", "Medication")
"""

SYSTEM_PROMPT = """You are a clinical knowledge curator building a medical knowledge graph
over diagnosis, procedure and medication codes.

Given two medical concepts, state the single most important direct relation from the
FIRST concept to the SECOND concept, as a short verb phrase.

Guidelines:
- Use concise phrases such as "is treated with", "is a complication of", "is contraindicated with"
- The phrase must read naturally as: <first concept> <relation> <second concept>
- Only report relations supported by established clinical knowledge
- If the concepts are unrelated, or the relation is speculative, answer null

Respond with a JSON object only."""

USER_PROMPT_TEMPLATE = """First concept: "{head}" ({head_kind})
Second concept: "{tail}" ({tail_kind})

Respond with valid JSON matching this schema:
{{
  "relation": "short verb phrase" | null
}}"""


def get_prompt(head: str, head_kind: str, tail: str, tail_kind: str) -> str:
    """Get the user prompt for one code pair."""
    return USER_PROMPT_TEMPLATE.format(
        head=head, head_kind=head_kind, tail=tail, tail_kind=tail_kind
    )


def get_system_prompt() -> str:
    return SYSTEM_PROMPT
