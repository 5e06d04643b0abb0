"""Prompt segmentation into style / content / atmosphere annotations.

The rule-based path is a pure lexicon lookup and always available.  The
external path delegates to a text-completion service speaking a small JSON
contract and falls back to the rules on any transport or format problem, so
the pipeline keeps working offline.
"""
from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field

DEFAULT_STYLE_WORDS = (
    "painting", "artistic", "realistic", "fashion", "texture", "fiction",
    "watercolor", "sketch", "cartoon", "abstract", "photorealistic",
)

DEFAULT_MOOD_WORDS = (
    "eerie", "serene", "gloomy", "joyful", "melancholic", "dreamy",
    "tense", "peaceful", "mysterious", "cheerful",
)

DEFAULT_STYLE = "realistic"

_WORD = re.compile(r"[a-z0-9&']+")


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class StyleLexicon:
    style_words: tuple[str, ...] = DEFAULT_STYLE_WORDS
    mood_words: tuple[str, ...] = DEFAULT_MOOD_WORDS


@dataclass
class SegmentedPrompt:
    raw: str
    style: str
    content: str
    atmosphere: str
    fallback: bool = False

    def __post_init__(self):
        if not self.style:
            raise SegmentationError("style must be non-empty")

    @property
    def composed(self) -> str:
        return (f"{self.raw} style: {self.style}; content: {self.content}; "
                f"atmosphere: {self.atmosphere}")

    def to_dict(self) -> dict:
        return {"raw": self.raw, "style": self.style, "content": self.content,
                "atmosphere": self.atmosphere, "composed": self.composed,
                "fallback": self.fallback}


def _tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def segment_rule_based(raw: str, lexicons: StyleLexicon | None = None) -> SegmentedPrompt:
    """Lexicon-driven segmentation; pure in (raw, lexicons)."""
    if not raw:
        raise SegmentationError("empty prompt")
    lexicons = lexicons or StyleLexicon()
    style_set = {w.lower() for w in lexicons.style_words}
    mood_set = {w.lower() for w in lexicons.mood_words}
    words = _tokens(raw)
    style = next((w for w in words if w in style_set), DEFAULT_STYLE)
    moods = [w for w in words if w in mood_set]
    content_words = [w for w in words if w not in style_set and w not in mood_set]
    return SegmentedPrompt(raw=raw, style=style,
                           content=" ".join(content_words),
                           atmosphere=" ".join(dict.fromkeys(moods)))


@dataclass
class EndpointConfig:
    url: str
    timeout: float = 5.0
    bearer_token: str | None = None

    @classmethod
    def from_env(cls, url: str | None = None, timeout: float | None = None
                 ) -> "EndpointConfig":
        url = os.environ.get("MINTIQA_SEGMENT_URL", url)
        if not url:
            raise SegmentationError("no segmentation endpoint configured")
        timeout = float(os.environ.get("MINTIQA_SEGMENT_TIMEOUT", timeout or 5.0))
        return cls(url=url, timeout=timeout,
                   bearer_token=os.environ.get("MINTIQA_SEGMENT_TOKEN"))


def segment_external(raw: str, endpoint: EndpointConfig,
                     lexicons: StyleLexicon | None = None) -> SegmentedPrompt:
    """Ask the configured completion service; fall back to rules on failure."""
    if not raw:
        raise SegmentationError("empty prompt")
    if not endpoint or not endpoint.url:
        raise SegmentationError("no segmentation endpoint configured")
    body = json.dumps({"prompt": raw,
                       "fields": ["style", "content", "atmosphere"]}).encode("utf-8")
    req = urllib.request.Request(endpoint.url, data=body,
                                 headers={"Content-Type": "application/json"})
    if endpoint.bearer_token:
        req.add_header("Authorization", f"Bearer {endpoint.bearer_token}")
    try:
        with urllib.request.urlopen(req, timeout=endpoint.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        style = payload["style"]
        content = payload["content"]
        atmosphere = payload["atmosphere"]
        if not isinstance(style, str) or not style:
            raise ValueError("missing or empty style")
        if not isinstance(content, str) or not isinstance(atmosphere, str):
            raise ValueError("content/atmosphere must be strings")
        return SegmentedPrompt(raw=raw, style=style, content=content,
                               atmosphere=atmosphere)
    except (urllib.error.URLError, TimeoutError, OSError,
            json.JSONDecodeError, KeyError, ValueError, SegmentationError):
        result = segment_rule_based(raw, lexicons)
        result.fallback = True
        return result
