"""Provider roles, offline mocks and the HTTP provider."""

from protoehr.kg.providers.base import (
    ContradictionSplitter,
    RelationSuggester,
    TextEmbedder,
    TripletJudge,
)
from protoehr.kg.providers.http import ChatCompletionsProvider
from protoehr.kg.providers.mock import (
    CooccurrenceSuggester,
    HashingEmbedder,
    KeywordJudge,
    LexiconSuggester,
    NegationSplitter,
)

__all__ = [
    "ChatCompletionsProvider",
    "ContradictionSplitter",
    "CooccurrenceSuggester",
    "HashingEmbedder",
    "KeywordJudge",
    "LexiconSuggester",
    "NegationSplitter",
    "RelationSuggester",
    "TextEmbedder",
    "TripletJudge",
]
