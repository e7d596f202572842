#!/usr/bin/env python3
"""Regenerates data/corpus.txt: ~1 MiB of seeded synthetic prose."""

import random

NOUNS = [
    "time", "year", "people", "way", "day", "man", "thing", "woman", "life", "child",
    "world", "school", "state", "family", "student", "group", "country", "problem",
    "hand", "part", "place", "case", "week", "company", "system", "program", "question",
    "work", "government", "number", "night", "point", "home", "water", "room", "mother",
    "area", "money", "story", "fact", "month", "lot", "right", "study", "book", "eye",
    "job", "word", "business", "issue", "side", "kind", "head", "house", "service",
    "friend", "father", "power", "hour", "game", "line", "end", "member", "law", "car",
    "city", "community", "name", "president", "team", "minute", "idea", "body",
    "information", "back", "parent", "face", "others", "level", "office", "door",
    "health", "person", "art", "war", "history", "party", "result", "change", "morning",
    "reason", "research", "girl", "guy", "moment", "air", "teacher", "force", "education",
]

VERBS = [
    "be", "have", "do", "say", "get", "make", "go", "know", "take", "see", "come",
    "think", "look", "want", "give", "use", "find", "tell", "ask", "work", "seem",
    "feel", "try", "leave", "call", "keep", "help", "talk", "turn", "start", "show",
    "hear", "play", "run", "move", "like", "live", "believe", "hold", "bring", "happen",
    "write", "provide", "sit", "stand", "lose", "pay", "meet", "include", "continue",
    "set", "learn", "lead", "understand", "watch", "follow", "stop", "create", "speak",
    "read", "allow", "add", "spend", "grow", "open", "walk", "win", "offer", "remember",
]

ADJS = [
    "good", "new", "first", "last", "long", "great", "little", "own", "other", "old",
    "right", "big", "high", "different", "small", "large", "next", "early", "young",
    "important", "few", "public", "bad", "same", "able", "free", "sure", "low", "late",
    "hard", "major", "better", "economic", "strong", "possible", "whole", "real",
    "certain", "human", "local", "easy", "clear", "recent", "full", "special",
]

ADVS = [
    "quickly", "slowly", "quietly", "carefully", "often", "rarely", "always", "never",
    "sometimes", "usually", "finally", "suddenly", "nearly", "almost", "together",
    "alone", "early", "late", "soon", "still", "again", "once", "twice", "here", "there",
]

PREPS = ["in", "on", "at", "by", "with", "from", "into", "over", "under", "between",
         "through", "during", "before", "after", "against", "among", "around", "near"]

CONJS = ["and", "but", "or", "so", "yet", "while", "because", "although", "since"]

DETS = ["the", "a", "the", "the", "a", "this", "that", "each", "every", "some", "any"]


def noun_phrase(rng):
    parts = [rng.choice(DETS)]
    if rng.random() < 0.45:
        parts.append(rng.choice(ADJS))
    parts.append(rng.choice(NOUNS))
    return " ".join(parts)


def verb_phrase(rng):
    parts = [rng.choice(VERBS)]
    if rng.random() < 0.3:
        parts.append(rng.choice(ADVS))
    return " ".join(parts)


def clause(rng):
    bits = [noun_phrase(rng), verb_phrase(rng)]
    roll = rng.random()
    if roll < 0.55:
        bits.append(noun_phrase(rng))
    if rng.random() < 0.4:
        bits.append(rng.choice(PREPS))
        bits.append(noun_phrase(rng))
    return " ".join(bits)


def sentence(rng):
    text = clause(rng)
    if rng.random() < 0.3:
        text += ", " + rng.choice(CONJS) + " " + clause(rng)
    text = text[0].upper() + text[1:]
    return text + rng.choice([".", ".", ".", ".", "?", "!"])


def main():
    rng = random.Random(20240817)
    target = 1 << 20
    out = []
    size = 0
    while size < target:
        para_sents = rng.randint(3, 7)
        para = " ".join(sentence(rng) for _ in range(para_sents)) + "\n\n"
        out.append(para)
        size += len(para)
    text = "".join(out)[:target]
    with open("data/corpus.txt", "w", encoding="ascii") as f:
        f.write(text)
    print(f"wrote data/corpus.txt ({len(text)} bytes)")


if __name__ == "__main__":
    main()
