from typing import Iterable, Optional

from thefuzz import fuzz, process

SIMILARITY_THRESHOLD = 60


def closest_name(name: str, choices: Iterable[str]) -> Optional[str]:
    """Best fuzzy match for a misspelled name, or None when nothing is close"""
    choices = [str(c) for c in choices]
    if not choices:
        return None
    match = process.extractOne(str(name), choices, scorer=fuzz.ratio)
    if match and match[1] >= SIMILARITY_THRESHOLD:
        return match[0]
    return None
