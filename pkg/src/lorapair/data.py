"""Sentence-pair datasets: QQP-style TSV I/O, a synthetic paraphrase corpus, tokenisation."""

from __future__ import annotations

import random
import re
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

TSV_HEADER = ("id", "text_a", "text_b", "label")
_WORD = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class PairExample:
    id: int
    text_a: str
    text_b: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"example {self.id}: label must be 0 or 1, got {self.label!r}")
        if not self.text_a.strip() or not self.text_b.strip():
            raise ValidationError(f"example {self.id}: empty text")


# --- TSV ---------------------------------------------------------------------


def load_tsv(path) -> list[PairExample]:
    """Read ``id<TAB>text_a<TAB>text_b<TAB>label`` rows.

    A first row whose label field is not an integer is taken as a header.
    """
    text = Path(path).read_text(encoding="utf-8")
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(f"expected 4 tab-separated fields, found {len(fields)}", lineno)
        raw_id, a, b, raw_label = fields
        if not raw_label.strip().lstrip("-").isdigit():
            if lineno == 1 and not out:
                continue
            raise ParseError(f"label {raw_label!r} is not an integer", lineno)
        if not raw_id.strip().isdigit():
            raise ParseError(f"id {raw_id!r} is not an unsigned integer", lineno)
        label = int(raw_label)
        if label not in (0, 1):
            raise ValidationError(f"line {lineno}: label must be 0 or 1, got {label}")
        try:
            out.append(PairExample(int(raw_id), a, b, label))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
    return out


def write_tsv(path, examples) -> None:
    lines = ["\t".join(TSV_HEADER)]
    for ex in examples:
        for t in (ex.text_a, ex.text_b):
            if "\t" in t or "\n" in t or "\r" in t:
                raise ValidationError(f"example {ex.id}: text contains a tab or newline")
        lines.append(f"{ex.id}\t{ex.text_a}\t{ex.text_b}\t{ex.label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- tokenisation ------------------------------------------------------------


def words(text):
    return _WORD.findall(text.lower())


def stable_hash(token: str) -> int:
    return zlib.crc32(token.encode("utf-8"))


def tokenize(text: str, vocab_size: int = 2048, max_seq_len: int = 32) -> list[int]:
    """Lowercase, split on anything that is not a letter or digit, hash into the vocabulary."""
    toks = words(text)
    if not toks:
        raise ValidationError(f"no tokens in {text!r}")
    return [stable_hash(t) % vocab_size for t in toks[:max_seq_len]]


# --- synthetic corpus --------------------------------------------------------

# "|" separates clauses that may be swapped when paraphrasing.
TOPICS = {
    "cooking": {
        "templates": [
            "how do i cook {dish} | without a {tool}",
            "what is the best way to make {dish} | using a {tool}",
            "can i prepare {dish} in a {tool}",
            "why does my {dish} burn | when i use the {tool}",
            "is it safe to bake {dish} | in an old {tool}",
        ],
        "slots": {
            "dish": ["rice", "pasta", "bread", "salmon", "chicken", "lentils", "pancakes", "soup"],
            "tool": ["oven", "skillet", "microwave", "pressure cooker", "wok", "grill"],
        },
    },
    "travel": {
        "templates": [
            "what should i pack for a trip to {place} | in {season}",
            "is {place} worth visiting | during {season}",
            "how can i travel cheaply to {place}",
            "when is the cheapest time to fly to {place}",
            "do i need a visa to visit {place} | for a short stay",
        ],
        "slots": {
            "place": ["japan", "peru", "iceland", "morocco", "canada", "vietnam", "norway", "kenya"],
            "season": ["winter", "summer", "spring", "autumn"],
        },
    },
    "programming": {
        "templates": [
            "how do i learn {lang} | as a beginner",
            "what is the best book to study {lang}",
            "why is my {lang} program slow | when it reads {thing}",
            "how can i debug a {lang} crash | caused by {thing}",
            "should i use {lang} to parse {thing}",
        ],
        "slots": {
            "lang": ["python", "rust", "java", "haskell", "kotlin", "golang", "javascript", "scala"],
            "thing": ["large files", "json", "network sockets", "database queries", "threads"],
        },
    },
    "finance": {
        "templates": [
            "how should i invest in {asset} | with a small salary",
            "is it smart to buy {asset} | before retirement",
            "what are the risks of holding {asset}",
            "how much {asset} should a student own",
            "can i lose money on {asset} | during a {event}",
        ],
        "slots": {
            "asset": ["stocks", "bonds", "gold", "real estate", "index funds", "bitcoin", "savings accounts"],
            "event": ["recession", "market crash", "inflation spike", "housing bubble"],
        },
    },
    "health": {
        "templates": [
            "how can i lower my {metric} | without medication",
            "what foods help reduce {metric}",
            "is {habit} bad for my {metric}",
            "why does {habit} raise my {metric}",
            "how quickly does quitting {habit} improve {metric}",
        ],
        "slots": {
            "metric": ["blood pressure", "cholesterol", "heart rate", "blood sugar", "stress level"],
            "habit": ["smoking", "coffee", "sugar", "alcohol", "late night snacking"],
        },
    },
    "sports": {
        "templates": [
            "how do i get better at {sport} | at age {age}",
            "what muscles does {sport} train",
            "is it too late to start {sport} | at {age}",
            "which shoes are good for {sport}",
            "how many hours a week should i practice {sport}",
        ],
        "slots": {
            "sport": ["tennis", "swimming", "basketball", "climbing", "rowing", "boxing", "cycling", "volleyball"],
            "age": ["thirty", "forty", "fifty", "sixty"],
        },
    },
    "music": {
        "templates": [
            "how long does it take to learn the {instrument}",
            "what is the easiest song to play on the {instrument}",
            "should my child learn {instrument} | or {style} singing",
            "how do i tune a {instrument} | by ear",
            "can i teach myself {style} on the {instrument}",
        ],
        "slots": {
            "instrument": ["piano", "guitar", "violin", "cello", "drums", "trumpet", "ukulele", "flute"],
            "style": ["jazz", "blues", "opera", "folk", "classical"],
        },
    },
    "gardening": {
        "templates": [
            "when should i plant {plant} | in {soil} soil",
            "why are my {plant} leaves turning yellow",
            "how often do i water {plant}",
            "can {plant} grow in {soil} soil | on a balcony",
            "what fertilizer is best for {plant}",
        ],
        "slots": {
            "plant": ["tomatoes", "roses", "basil", "strawberries", "orchids", "cucumbers", "tulips", "peppers"],
            "soil": ["clay", "sandy", "acidic", "rocky"],
        },
    },
    "cars": {
        "templates": [
            "how do i fix a {part} | on a {brand}",
            "why does my {brand} make noise | from the {part}",
            "how much does it cost to replace the {part}",
            "is a used {brand} reliable",
            "what causes a {part} to fail | after winter",
        ],
        "slots": {
            "part": ["battery", "alternator", "brake pad", "radiator", "clutch", "gearbox", "tire"],
            "brand": ["toyota", "honda", "volvo", "subaru", "ford", "mazda", "nissan"],
        },
    },
    "education": {
        "templates": [
            "how do i prepare for a {exam} | in {span}",
            "is a {degree} degree worth it",
            "what is the hardest part of the {exam}",
            "can i pass the {exam} | after studying for {span}",
            "should i get a {degree} degree | or work first",
        ],
        "slots": {
            "exam": ["bar exam", "gmat", "sat", "toefl", "medical boards", "driving test"],
            "degree": ["physics", "history", "nursing", "economics", "philosophy", "architecture"],
            "span": ["two weeks", "one month", "three months", "a semester"],
        },
    },
}

SYNONYMS = {
    "how": ["in what way"],
    "best": ["top", "finest", "ideal"],
    "make": ["prepare", "create"],
    "cook": ["prepare", "make"],
    "learn": ["study", "master", "pick up"],
    "study": ["learn", "read up on"],
    "buy": ["purchase", "acquire"],
    "fix": ["repair", "mend"],
    "start": ["begin", "take up"],
    "cheap": ["inexpensive", "affordable"],
    "cheaply": ["inexpensively", "on a budget"],
    "cheapest": ["least expensive", "most affordable"],
    "quickly": ["fast", "rapidly", "soon"],
    "lower": ["reduce", "decrease"],
    "reduce": ["lower", "cut"],
    "improve": ["boost", "help"],
    "smart": ["wise", "sensible"],
    "good": ["great", "suitable"],
    "easiest": ["simplest"],
    "hardest": ["toughest", "most difficult"],
    "often": ["frequently"],
    "need": ["require"],
    "use": ["utilize"],
    "bad": ["harmful", "unhealthy"],
    "safe": ["okay", "fine"],
    "slow": ["sluggish"],
    "better": ["stronger", "more skilled"],
    "should": ["ought to"],
    "worth": ["deserving of"],
    "noise": ["sounds", "a racket"],
    "replace": ["swap", "change"],
    "reliable": ["dependable", "trustworthy"],
    "causes": ["leads", "makes"],
    "risks": ["dangers", "downsides"],
    "trip": ["journey", "vacation"],
    "visiting": ["seeing", "touring"],
    "visit": ["see", "tour"],
    "old": ["aged", "worn"],
    "small": ["modest", "low"],
    "child": ["kid", "son or daughter"],
    "practice": ["train", "rehearse"],
}


def _fill(template, values):
    return [c.strip().format(**values) for c in template.split("|")]


def _paraphrase(clauses, rnd):
    if len(clauses) > 1 and rnd.random() < 0.5:
        clauses = clauses[::-1]
    out = []
    for w in " ".join(clauses).split():
        alts = SYNONYMS.get(w)
        out.append(rnd.choice(alts) if alts and rnd.random() < 0.5 else w)
    return out


def _sentence(tokens):
    return " ".join(tokens) + "?"


def _draw(topic, rnd):
    entry = TOPICS[topic]
    values = {k: rnd.choice(v) for k, v in entry["slots"].items()}
    return values, rnd.randrange(len(entry["templates"]))


def generate_synthetic(seed: int, n: int) -> list[PairExample]:
    """n/2 paraphrase pairs and n/2 cross-topic pairs, shuffled, ids 0..n-1.

    A positive pairs one question with a rewording of the same question
    (optionally via a sibling template of the same topic with the same slot
    values), then swaps clause order and substitutes synonyms at random.
    """
    if n < 2 or n % 2:
        raise ValidationError(f"synthetic corpus size must be even and >= 2, got {n}")
    rnd = random.Random(seed)
    names = sorted(TOPICS)
    pairs = []
    for _ in range(n // 2):
        topic = rnd.choice(names)
        values, t1 = _draw(topic, rnd)
        templates = TOPICS[topic]["templates"]
        t2 = t1
        if rnd.random() < 0.3:
            t2 = rnd.randrange(len(templates))
        clauses = _fill(templates[t1], values)
        a = _paraphrase(clauses, rnd) if rnd.random() < 0.2 else " ".join(clauses).split()
        b = _paraphrase(_fill(templates[t2], values), rnd)
        pairs.append((_sentence(a), _sentence(b), 1))
    for _ in range(n // 2):
        ta, tb = rnd.sample(names, 2)
        va, ia = _draw(ta, rnd)
        vb, ib = _draw(tb, rnd)
        a = _paraphrase(_fill(TOPICS[ta]["templates"][ia], va), rnd)
        b = _paraphrase(_fill(TOPICS[tb]["templates"][ib], vb), rnd)
        pairs.append((_sentence(a), _sentence(b), 0))
    rnd.shuffle(pairs)
    return [PairExample(i, a, b, y) for i, (a, b, y) in enumerate(pairs)]


# --- splits ------------------------------------------------------------------

SPLITS = ("pretrain", "train", "validation", "test")


def split_dataset(examples, rng, pretrain_frac=0.2, val_frac=0.15, test_frac=0.15) -> dict:
    """Disjoint seeded partition into pretrain / train / validation / test."""
    n = len(examples)
    fracs = (pretrain_frac, val_frac, test_frac)
    if any(f < 0 for f in fracs) or sum(fracs) >= 1:
        raise ValidationError(f"split fractions {fracs} leave no training data")
    order = rng.permutation(n)
    n_pre, n_val, n_test = (int(round(f * n)) for f in fracs)
    cuts = np.cumsum([n_pre, n - n_pre - n_val - n_test, n_val])
    parts = np.split(order, cuts)
    return {name: [examples[i] for i in sorted(idx)] for name, idx in zip(SPLITS, parts)}
