"""Grapheme-to-phoneme conversion over a fixed ARPAbet-style inventory.

Known words come from an embedded lexicon; out-of-lexicon words fall back to
a deterministic rule-based letter-to-sound pass, so the same text always maps
to the same phoneme sequence without external data files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

PAD = "<pad>"
SILENCE = "sp"

_VOWELS = (
    "AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW"
).split()
_CONSONANTS = (
    "B CH D DH F G HH JH K L M N NG P R S SH T TH V W Y Z ZH"
).split()

# Stable ordering: pad, silence, then the phone set.
INVENTORY: tuple[str, ...] = (PAD, SILENCE, *_VOWELS, *_CONSONANTS)
PHONEME_IDS: dict[str, int] = {p: i for i, p in enumerate(INVENTORY)}


def is_silence(phoneme: str) -> bool:
    return phoneme in (PAD, SILENCE)


@dataclass(frozen=True)
class PhonemeSequence:
    """An ordered, validated phoneme string of length T >= 1."""

    phonemes: tuple[str, ...]

    def __post_init__(self):
        if len(self.phonemes) < 1:
            raise ValueError("phoneme sequence must be non-empty")
        bad = [p for p in self.phonemes if p not in PHONEME_IDS]
        if bad:
            raise ValueError(f"phonemes not in inventory: {bad}")

    def __len__(self) -> int:
        return len(self.phonemes)

    def ids(self) -> list[int]:
        return [PHONEME_IDS[p] for p in self.phonemes]


_DIGITS = {
    "0": "zero", "1": "one", "2": "two", "3": "three", "4": "four",
    "5": "five", "6": "six", "7": "seven", "8": "eight", "9": "nine",
}


def normalize_text(text: str) -> str:
    """Lowercase, spell out digits, strip punctuation, collapse whitespace."""
    text = text.lower()
    text = re.sub(r"\d", lambda m: " " + _DIGITS[m.group(0)] + " ", text)
    text = re.sub(r"[^a-z' ]", " ", text)
    text = re.sub(r"'+", "'", text)
    words = [w.strip("'") for w in text.split()]
    return " ".join(w for w in words if w)


# A compact pronunciation lexicon (ARPAbet without stress marks).
LEXICON: dict[str, tuple[str, ...]] = {
    w: tuple(p.split()) for w, p in {
        "a": "AH", "about": "AH B AW T", "after": "AE F T ER",
        "again": "AH G EH N", "all": "AO L", "also": "AO L S OW",
        "always": "AO L W EY Z", "an": "AE N", "and": "AH N D",
        "answer": "AE N S ER", "any": "EH N IY", "are": "AA R",
        "as": "AE Z", "asked": "AE S K T", "at": "AE T",
        "away": "AH W EY", "back": "B AE K", "be": "B IY",
        "because": "B IH K AO Z", "been": "B IH N", "before": "B IH F AO R",
        "began": "B IH G AE N", "bird": "B ER D", "birds": "B ER D Z",
        "book": "B UH K", "boy": "B OY", "but": "B AH T",
        "by": "B AY", "called": "K AO L D", "came": "K EY M",
        "can": "K AE N", "children": "CH IH L D R AH N",
        "city": "S IH T IY", "cold": "K OW L D", "could": "K UH D",
        "dark": "D AA R K", "day": "D EY", "did": "D IH D",
        "do": "D UW", "dog": "D AO G", "door": "D AO R",
        "down": "D AW N", "each": "IY CH", "early": "ER L IY",
        "eight": "EY T", "evening": "IY V N IH NG", "ever": "EH V ER",
        "every": "EH V R IY", "eyes": "AY Z", "far": "F AA R",
        "father": "F AA DH ER", "few": "F Y UW", "find": "F AY N D",
        "fire": "F AY ER", "first": "F ER S T", "five": "F AY V",
        "for": "F AO R", "found": "F AW N D", "four": "F AO R",
        "friend": "F R EH N D", "from": "F R AH M", "garden": "G AA R D AH N",
        "gave": "G EY V", "go": "G OW", "good": "G UH D",
        "great": "G R EY T", "green": "G R IY N", "had": "HH AE D",
        "hand": "HH AE N D", "has": "HH AE Z", "have": "HH AE V",
        "he": "HH IY", "heard": "HH ER D", "her": "HH ER",
        "here": "HH IY R", "him": "HH IH M", "his": "HH IH Z",
        "home": "HH OW M", "house": "HH AW S", "how": "HH AW",
        "i": "AY", "if": "IH F", "in": "IH N", "into": "IH N T UW",
        "is": "IH Z", "it": "IH T", "its": "IH T S",
        "just": "JH AH S T", "knew": "N UW", "know": "N OW",
        "last": "L AE S T", "late": "L EY T", "left": "L EH F T",
        "light": "L AY T", "like": "L AY K", "little": "L IH T AH L",
        "long": "L AO NG", "looked": "L UH K T", "made": "M EY D",
        "man": "M AE N", "many": "M EH N IY", "mary": "M EH R IY",
        "may": "M EY", "me": "M IY", "men": "M EH N",
        "more": "M AO R", "morning": "M AO R N IH NG",
        "mother": "M AH DH ER", "much": "M AH CH", "must": "M AH S T",
        "my": "M AY", "never": "N EH V ER", "new": "N UW",
        "night": "N AY T", "nine": "N AY N", "no": "N OW",
        "not": "N AA T", "now": "N AW", "of": "AH V",
        "off": "AO F", "often": "AO F AH N", "old": "OW L D",
        "on": "AA N", "once": "W AH N S", "one": "W AH N",
        "only": "OW N L IY", "open": "OW P AH N", "or": "AO R",
        "other": "AH DH ER", "our": "AW ER", "out": "AW T",
        "over": "OW V ER", "people": "P IY P AH L", "place": "P L EY S",
        "put": "P UH T", "question": "K W EH S CH AH N",
        "quiet": "K W AY AH T", "rain": "R EY N", "read": "R EH D",
        "river": "R IH V ER", "road": "R OW D", "room": "R UW M",
        "said": "S EH D", "same": "S EY M", "saw": "S AO",
        "school": "S K UW L", "sea": "S IY", "seven": "S EH V AH N",
        "she": "SH IY", "should": "SH UH D", "six": "S IH K S",
        "sky": "S K AY", "small": "S M AO L", "so": "S OW",
        "some": "S AH M", "song": "S AO NG", "soon": "S UW N",
        "still": "S T IH L", "stood": "S T UH D", "story": "S T AO R IY",
        "summer": "S AH M ER", "sun": "S AH N", "than": "DH AE N",
        "that": "DH AE T", "the": "DH AH", "their": "DH EH R",
        "them": "DH EH M", "then": "DH EH N", "there": "DH EH R",
        "these": "DH IY Z", "they": "DH EY", "this": "DH IH S",
        "thought": "TH AO T", "three": "TH R IY", "through": "TH R UW",
        "time": "T AY M", "to": "T UW", "told": "T OW L D",
        "took": "T UH K", "town": "T AW N", "tree": "T R IY",
        "two": "T UW", "under": "AH N D ER", "until": "AH N T IH L",
        "up": "AH P", "upon": "AH P AA N", "us": "AH S",
        "very": "V EH R IY", "voice": "V OY S", "walked": "W AO K T",
        "was": "W AA Z", "water": "W AO T ER", "way": "W EY",
        "we": "W IY", "well": "W EH L", "went": "W EH N T",
        "were": "W ER", "what": "W AH T", "when": "W EH N",
        "where": "W EH R", "which": "W IH CH", "while": "W AY L",
        "white": "W AY T", "who": "HH UW", "why": "W AY",
        "will": "W IH L", "wind": "W IH N D", "window": "W IH N D OW",
        "winter": "W IH N T ER", "with": "W IH DH", "woman": "W UH M AH N",
        "word": "W ER D", "words": "W ER D Z", "work": "W ER K",
        "world": "W ER L D", "would": "W UH D", "year": "Y IY R",
        "years": "Y IY R Z", "yes": "Y EH S", "you": "Y UW",
        "young": "Y AH NG", "zero": "Z IY R OW",
    }.items()
}

# Letter-to-sound rules for out-of-lexicon words: greedy longest match over
# grapheme clusters, applied left to right.
_LTS_CLUSTERS: tuple[tuple[str, tuple[str, ...]], ...] = tuple(
    (g, tuple(p.split())) for g, p in (
        ("tch", "CH"), ("igh", "AY"), ("sch", "S K"),
        ("th", "TH"), ("sh", "SH"), ("ch", "CH"), ("ph", "F"),
        ("wh", "W"), ("ck", "K"), ("ng", "NG"), ("qu", "K W"),
        ("ee", "IY"), ("ea", "IY"), ("oo", "UW"), ("ou", "AW"),
        ("ow", "OW"), ("ai", "EY"), ("ay", "EY"), ("oa", "OW"),
        ("oi", "OY"), ("oy", "OY"), ("au", "AO"), ("aw", "AO"),
        ("ew", "UW"), ("ar", "AA R"), ("or", "AO R"), ("er", "ER"),
        ("ir", "ER"), ("ur", "ER"),
    )
)

_LTS_SINGLE = {
    "a": "AE", "b": "B", "c": "K", "d": "D", "e": "EH", "f": "F",
    "g": "G", "h": "HH", "i": "IH", "j": "JH", "k": "K", "l": "L",
    "m": "M", "n": "N", "o": "AA", "p": "P", "q": "K", "r": "R",
    "s": "S", "t": "T", "u": "AH", "v": "V", "w": "W", "x": "K S",
    "y": "IY", "z": "Z", "'": "",
}

_LONG_VOWEL = {"a": "EY", "e": "IY", "i": "AY", "o": "OW", "u": "UW"}


def letter_to_sound(word: str) -> tuple[str, ...]:
    """Rule-based pronunciation for a normalized out-of-lexicon word."""
    if not word:
        raise ValueError("empty word")
    if word.startswith(("kn", "wr")) and len(word) > 2:
        word = word[1:]
    # Final silent e lengthens the preceding vowel (vowel-consonant-e
    # pattern); the marker is the uppercased vowel.
    if (
        len(word) >= 3
        and word[-1] == "e"
        and word[-2] not in "aeiou"
        and word[-3] in _LONG_VOWEL
    ):
        word = word[:-3] + word[-3].upper() + word[-2]

    phones: list[str] = []
    i = 0
    prev = ""
    while i < len(word):
        ch = word[i]
        if ch in "AEIOU":
            phones.append(_LONG_VOWEL[ch.lower()])
            prev = ch.lower()
            i += 1
            continue
        matched = False
        for graph, ph in _LTS_CLUSTERS:
            if word.startswith(graph, i):
                phones.extend(ph)
                prev = graph[-1]
                i += len(graph)
                matched = True
                break
        if matched:
            continue
        if ch == prev and ch not in "aeiou":
            i += 1  # collapse doubled consonants
            continue
        mapped = "Y" if (ch == "y" and i == 0) else _LTS_SINGLE.get(ch, "")
        if mapped:
            phones.extend(mapped.split())
        prev = ch
        i += 1
    return tuple(phones)


def g2p(text: str, word_boundary_silence: bool = False) -> PhonemeSequence:
    """Convert text to a phoneme sequence.

    Lexicon entries win; anything else goes through
    :func:`letter_to_sound`.  With ``word_boundary_silence`` a short-pause
    symbol is inserted between words.

    Raises ``ValueError`` when the normalized text is empty.
    """
    norm = normalize_text(text)
    if not norm:
        raise ValueError(f"no pronounceable content in {text!r}")
    phones: list[str] = []
    for word in norm.split():
        chunk = LEXICON.get(word) or letter_to_sound(word)
        if not chunk:
            continue
        if phones and word_boundary_silence:
            phones.append(SILENCE)
        phones.extend(chunk)
    if not phones:
        raise ValueError(f"no pronounceable content in {text!r}")
    return PhonemeSequence(tuple(phones))
