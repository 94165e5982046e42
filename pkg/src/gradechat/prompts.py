"""Prompt construction for the three chat roles.

Templates are filled from the bundled level table (level word, guidelines,
capability description, example dialogue) plus, for the detailed tutor
variant, a list of expressions known at the user's level sampled from a
leveled lexicon. ``build_prompt`` is a pure function of its spec.
"""
from __future__ import annotations

import json
import random
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .levels import Level
from .lexicon import LevelLexicon
from .util import derive_seed

TUTOR_BASELINE = "tutor_baseline"
TUTOR_DETAILED = "tutor_detailed"
STUDENT_ROLE = "student"

DEFAULT_LANGUAGE = "Japanese"
DEFAULT_KNOWN_EXPRESSIONS = 100


class PromptError(ValueError):
    pass


STUDENT_TEMPLATE = """You are roleplaying as a student learning {language} at the {level_word} level.
You are having a conversation with your language partner (i.e. the user) to practice {language}.
The topic of this conversation is: {topic}.
As a {level_word} student, you are: {desc}.
You must speak using only the vocabulary and grammar allowed at this level.
You are not in a formal class - this is casual language practice with someone your age.

You should ALWAYS follow the rules below:
1. You should stick to using only the vocabulary and grammar allowed at your level mentioned above.
2. Do not ask the user to teach you things. Just bring up the topic naturally and continue the conversation.
3. Your conversation should revolve around the topic of: {topic}. Respond one idea at a time.
4. You must keep the conversation going. Do not assume the conversation is over just because a few turns have passed.
5. DO NOT say anything like 'goodbye', 'see you next time', or anything else that signals the end of this conversation. You MUST keep the conversation going.
6. You should speak in {language} and {language} only."""

TUTOR_BASELINE_TEMPLATE = """You are a {language} language tutor.
Your goal is to help the user improve their {language} conversation skills through a natural, back-and-forth dialogue.
You are a native {language} speaker, around the same age as the user, and you're acting as their language partner.
The user you are speaking with is at the {level_word} level.
Please be aware of the user's level at all times and ensure that all of your responses stay within a level that is understandable to a user at this proficiency.
Stick to the topic the user brings up. Do not suggest topics or introduce new topics on your own.
Stay on the user's topic and follow their lead throughout the conversation.
Don't pick on small mistakes the user makes. If the user makes a really big grammar mistake, remind the user by saying the corrected version of the sentence. DO NOT try to explain their mistake.
You should keep the conversation going back and forth.
You must never say things like 'goodbye', 'see you tomorrow', or anything else that signals the end of the conversation unless the user initiates it.
You should speak in {language} and {language} only."""

TUTOR_DETAILED_TEMPLATE = """You are a {language} language tutor.
Your goal is to help the user improve their {language} conversation skills through a natural, back-and-forth dialogue.
You are a native {language} speaker, around the same age as the user, and you're acting as their language partner.
The user you are speaking with is at the {level_word} level.
This means that they: {level_description}.
An example of a short dialogue at the user's comprehension level is:
{level_conv_example}

Please be aware of the user's level at all times and ensure that all of your responses stay within a level that is understandable to a user at this proficiency.

You should ALWAYS follow the rules below:
1. {level_guidelines}
2. Remember, the user is a language learner, not a native speaker. You should make sure that you are speaking in a way that the user could understand with their current {language} level.
3. You should try to match the user's abilities of understanding and speaking: if the user only uses simple expressions, you should only use simple expressions as well.
4. During the conversation, don't pick on small mistakes the user makes. If the user makes a really big grammar mistake, remind the user by saying the corrected version of the sentence. DO NOT try to explain their mistake.
5. Stick to the topic the user brings up. Do not suggest topics or introduce new topics on your own. Stay on the user's topic and follow their lead throughout the conversation.
6. You should keep the conversation going back and forth.
7. You must never say things like 'goodbye', 'see you tomorrow', or anything else that signals the end of the conversation unless the user initiates it.
8. You should speak in {language} and {language} only.
9. Here are some expressions the user knows: {known_expressions}. Restrict your speaking to use these words and other words of similar or lower difficulty."""

_TEMPLATES = {
    STUDENT_ROLE: STUDENT_TEMPLATE,
    TUTOR_BASELINE: TUTOR_BASELINE_TEMPLATE,
    TUTOR_DETAILED: TUTOR_DETAILED_TEMPLATE,
}


def _load_data(name: str) -> dict:
    with resources.files("gradechat.data").joinpath(name).open(encoding="utf-8") as fh:
        return json.load(fh)


@lru_cache(maxsize=None)
def level_info() -> dict[str, dict[str, str]]:
    return _load_data("level_info.json")


@lru_cache(maxsize=None)
def selfchat_topics() -> dict[int, list[str]]:
    raw = _load_data("topics_selfchat.json")
    return {Level.from_label(label).value: topics for label, topics in raw.items()}


@lru_cache(maxsize=None)
def human_topic_pool(level: Level) -> list[str]:
    raw = _load_data("topics_human.json")
    pool_key = raw["level_map"][level.label]
    return list(raw["pools"][pool_key])


@dataclass(frozen=True)
class PromptSpec:
    role: str
    level: Level
    language: str = DEFAULT_LANGUAGE
    topic: str | None = None
    known_expressions: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.role not in _TEMPLATES:
            raise PromptError(f"unknown prompt role: {self.role!r}")


def _fields_for(spec: PromptSpec) -> dict[str, str]:
    info = level_info()[spec.level.label]
    fields = {
        "language": spec.language,
        "level_word": info["word"],
        "desc": info["description"],
        "level_description": info["description"],
        "level_guidelines": info["guidelines"],
        "level_conv_example": info["example_dialogue"],
    }
    if spec.topic is not None:
        fields["topic"] = spec.topic
    if spec.known_expressions:
        fields["known_expressions"] = "、".join(spec.known_expressions)
    return fields


def build_prompt(spec: PromptSpec) -> str:
    """Render the template for the requested role; every placeholder must resolve."""
    template = _TEMPLATES[spec.role]
    fields = _fields_for(spec)
    required = {name for _, name, _, _ in string.Formatter().parse(template) if name}
    missing = sorted(required - set(fields))
    if missing:
        raise PromptError(f"missing prompt field(s) for role {spec.role}: {', '.join(missing)}")
    return template.format(**{name: fields[name] for name in required})


def sample_known_expressions(
    lexicon: LevelLexicon,
    level: Level,
    count: int = DEFAULT_KNOWN_EXPRESSIONS,
    seed: int = 0,
) -> tuple[str, ...]:
    """Seeded sample of level-appropriate lemmas for the detailed prompt.

    Primary pool is the user's own level bin; when a sparse lexicon has no
    words exactly there, the pool widens to everything at or below the
    level, since a learner at level L knows easier vocabulary too.
    """
    pool = lexicon.lemmas_at(level)
    if not pool:
        pool = sorted(
            lemma
            for lemma, entry in lexicon.entries.items()
            if entry.level is not None and entry.level.value <= level.value
        )
    if not pool:
        return ()
    rng = random.Random(derive_seed(seed, "known_expressions", level.value))
    take = min(count, len(pool))
    return tuple(rng.sample(pool, take))
