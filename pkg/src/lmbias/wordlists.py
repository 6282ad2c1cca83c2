"""Word-list file parsing and access to the packaged default lists.

Two file shapes: plain lists (one word per line) and pair lists (one
``female<TAB>male`` pair per line).  Lines starting with ``#`` and blank
lines are ignored in both.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .errors import ParseError

_DATA = resources.files("lmbias.data")

DEFAULT_FILES = {
    "definitional_pairs": "definitional_pairs.txt",
    "equality_pairs": "equality_pairs.txt",
    "male_nouns": "male_nouns.txt",
    "female_nouns": "female_nouns.txt",
    "male_occupations": "male_occupations.txt",
    "female_occupations": "female_occupations.txt",
    "synth_templates": "synth_templates.txt",
    "synth_templates_male": "synth_templates_male.txt",
    "synth_templates_female": "synth_templates_female.txt",
}


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def parse_word_list(text: str) -> list[str]:
    """One lowercased word per line; duplicates are a parse error."""
    words: list[str] = []
    seen: set[str] = set()
    for lineno, line in _content_lines(text):
        word = line.lower()
        if len(word.split()) != 1:
            raise ParseError(f"expected a single word, got {line!r}", line=lineno)
        if word in seen:
            raise ParseError(f"duplicate word {word!r}", line=lineno)
        seen.add(word)
        words.append(word)
    return words


def parse_pair_list(text: str) -> list[tuple[str, str]]:
    """One ``female<TAB>male`` pair per line, lowercased, words distinct."""
    pairs: list[tuple[str, str]] = []
    for lineno, line in _content_lines(text):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(
                f"expected 'female<TAB>male', got {line!r}", line=lineno)
        fem, male = (f.strip().lower() for f in fields)
        if not fem or not male:
            raise ParseError(f"empty word in pair {line!r}", line=lineno)
        if fem == male:
            raise ParseError(f"pair words must be distinct: {line!r}", line=lineno)
        pairs.append((fem, male))
    return pairs


def read_word_list(path: str | Path) -> list[str]:
    return parse_word_list(Path(path).read_text(encoding="utf-8"))


def read_pair_list(path: str | Path) -> list[tuple[str, str]]:
    return parse_pair_list(Path(path).read_text(encoding="utf-8"))


def _default_text(key: str) -> str:
    return (_DATA / DEFAULT_FILES[key]).read_text(encoding="utf-8")


def default_word_list(key: str) -> list[str]:
    """Packaged default plain list: male_nouns, female_nouns,
    male_occupations, female_occupations, or synth_templates."""
    return [line for _, line in _content_lines(_default_text(key))]


def default_pair_list(key: str) -> list[tuple[str, str]]:
    """Packaged default pair list: definitional_pairs or equality_pairs."""
    return parse_pair_list(_default_text(key))
