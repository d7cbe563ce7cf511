"""Completion backends: a deterministic offline mock and an HTTP chat-completion client."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Protocol

log = logging.getLogger(__name__)

API_KEY_ENV = "SEMOB_API_KEY"
TASKS = ("event_info", "queries", "tweets", "mobility", "evaluator_global", "evaluator_venue")


class BackendError(RuntimeError):
    """The backend could not produce a reply (network, auth, timeout)."""


class CompletionBackend(Protocol):
    def complete(self, prompt: str, *, task: str, inputs: Mapping | None = None) -> str: ...


def digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# mock
# ---------------------------------------------------------------------------

_ATTENTION = ("limited attention", "moderate attention", "widely discussed")
_WILLINGNESS = ("willingness to attend is unclear", "some groups are interested", "strong willingness to attend")
_SENTIMENT = ("neutral", "somewhat positive", "generally excited")
_STOP = set("a an the and or of at on in to for is are be with from by this that it its about will most".split())


def _pick(options, seed_hex: str, salt: int = 0):
    return options[(int(seed_hex[salt * 4 : salt * 4 + 8], 16)) % len(options)]


@dataclass
class MockBackend:
    """Deterministic template filler.

    The reply depends only on the task, the prompt and the structured inputs
    (hashed together), so identical calls give byte-identical replies and any
    change to the prompt, such as a revised screening logic, changes the reply.
    ``fail_first`` makes the first n calls return an unusable reply, which
    exercises the re-prompt path.
    """

    fail_first: int = 0
    calls: list[dict] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def complete(self, prompt: str, *, task: str, inputs: Mapping | None = None) -> str:
        inputs = dict(inputs or {})
        with self._lock:
            self.calls.append({"task": task, "prompt": prompt})
            if self.fail_first > 0:
                self.fail_first -= 1
                return "I am not sure how to answer that."
        seed = digest(task, prompt, inputs)
        fn = getattr(self, f"_{task}", None)
        if fn is None:
            raise BackendError(f"mock backend has no template for task {task!r}")
        return fn(inputs, seed)

    # -- one filler per task ------------------------------------------------
    def _event_info(self, x: dict, seed: str) -> str:
        cats = x.get("categories") or ["General"]
        kind = f"{cats[0]} event" + (f" with {', '.join(cats[1:])} elements" if len(cats) > 1 else "")
        desc = x.get("description", "").strip()
        return "\n".join(
            [
                f"1. Event Type: {kind}.",
                f"2. Event Venue and Location Information: {x.get('venue_name', x.get('venue_id', 'the venue'))} "
                f"({x.get('venue_id', '')}) at {x.get('venue_coords', '')}.",
                f"3. Event Time: {x.get('date', '')} from {x.get('start_time', '')} to {x.get('end_time', '')}.",
                f"4. Event Content: {desc or 'no description listed'}",
                f"5. Target Audience: people interested in {' and '.join(c.lower() for c in cats)}.",
                f"6. Event Scale or Importance: {x.get('scale', '') or _pick(('local', 'regional'), seed)}",
            ]
        )

    def _queries(self, x: dict, seed: str) -> str:
        event_terms = [t for t in x.get("event_terms", []) if t] or ["event"]
        loc_terms = [t for t in x.get("location_terms", []) if t] or ["venue"]
        lines = []
        for k in range(5):
            ev = [event_terms[(k + j) % len(event_terms)] for j in range(min(2, len(event_terms)))]
            lo = [loc_terms[(k + j) % len(loc_terms)] for j in range(min(2, len(loc_terms)))]
            if k == 4:
                ev = event_terms[:3]
            lines.append(f"({' OR '.join(dict.fromkeys(ev))}) AND ({' OR '.join(dict.fromkeys(lo))})")
        return "\n".join(lines)

    def _tweets(self, x: dict, seed: str) -> str:
        texts = x.get("tweets", [])
        n = len(texts)
        level = 0 if n == 0 else (1 if n < 5 else 2)
        words = Counter(
            w for t in texts for w in re.findall(r"[#\w']+", t.lower()) if w not in _STOP and len(w) > 2
        )
        topics = ", ".join(w for w, _ in sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:5]) or "none found"
        return "\n".join(
            [
                f"1. Social Media Attention and Reasons: {_ATTENTION[level]}; {n} relevant posts.",
                f"2. Public Participation Willingness and Audience Characteristics with Reasons: {_WILLINGNESS[level]}.",
                f"3. Sentiment Distribution and Reasons: {_pick(_SENTIMENT, seed) if n else 'neutral'}.",
                f"4. Main Discussion Topics: {topics}.",
            ]
        )

    def _mobility(self, x: dict, seed: str) -> str:
        tag = digest(x.get("logic", ""))[:8]
        recent = x.get("recent_count", 0)
        traffic = (
            f"{x.get('scale', '').strip()} Expect added traffic around {x.get('venue_name', 'the venue')}; "
            f"timing: {x.get('time', '').strip()} Screening logic {tag} applied."
        ).strip()
        info = x.get("event_type", "").strip()
        if recent:
            info += f" {recent} recent events at this venue."
        reply = {
            "filtered event info": info,
            "filtered public reactions": x.get("attention", "").strip() or "no notable discussion",
            "traffic conditions": traffic,
        }
        return json.dumps(reply)

    def _evaluator_global(self, x: dict, seed: str) -> str:
        worst = x.get("worst", {})
        rules = [f"- Weigh {dim} bucket {b} more heavily." for dim in sorted(worst) for b in worst[dim]]
        return (x.get("logic_global", "").rstrip() + f"\nRevision note {seed[:8]}:\n" + "\n".join(rules)).strip()

    def _evaluator_venue(self, x: dict, seed: str) -> str:
        return (
            x.get("logic_venue", "").rstrip()
            + f"\nVenue {x.get('venue_id', '')} note {seed[:8]}: mean error {x.get('venue_mae', 0.0):.2f}."
        ).strip()


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------


@dataclass
class CallCost:
    task: str
    prompt_tokens: int
    completion_tokens: int
    cost: float


@dataclass
class HttpBackend:
    """Chat-completion client: POST ``{model, messages}`` with a bearer token.

    The token is read from ``SEMOB_API_KEY``.  Transient failures are retried
    up to ``max_retries`` times with exponential backoff; each successful call
    appends its token usage and cost to ``costs``.
    """

    url: str
    model: str
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 1.0
    price_per_1k_prompt: float = 0.0
    price_per_1k_completion: float = 0.0
    costs: list[CallCost] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _token(self) -> str:
        token = os.environ.get(API_KEY_ENV)
        if not token:
            raise BackendError(f"environment variable {API_KEY_ENV} is not set")
        return token

    def complete(self, prompt: str, *, task: str, inputs: Mapping | None = None) -> str:
        body = json.dumps({"model": self.model, "messages": [{"role": "user", "content": prompt}]}).encode("utf-8")
        headers = {"Content-Type": "application/json", "Authorization": f"Bearer {self._token()}"}
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                    doc = json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                last = exc
                if exc.code < 500 and exc.code != 429:
                    raise BackendError(f"{self.url}: HTTP {exc.code}") from exc
                continue
            except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
                last = exc
                continue
            try:
                text = doc["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"{self.url}: unexpected response shape") from exc
            self._record(task, doc.get("usage") or {})
            return text
        raise BackendError(f"{self.url}: giving up after {self.max_retries + 1} attempts ({last})")

    def _record(self, task: str, usage: dict) -> None:
        p = int(usage.get("prompt_tokens", 0))
        c = int(usage.get("completion_tokens", 0))
        cost = p / 1000 * self.price_per_1k_prompt + c / 1000 * self.price_per_1k_completion
        with self._lock:
            self.costs.append(CallCost(task, p, c, cost))
        log.info("backend call task=%s prompt_tokens=%d completion_tokens=%d cost=%.5f", task, p, c, cost)

    def total_cost(self) -> float:
        return sum(c.cost for c in self.costs)


def make_backend(kind: str, **kwargs) -> CompletionBackend:
    if kind == "mock":
        return MockBackend(**kwargs)
    if kind == "http":
        url = kwargs.pop("url", None) or os.environ.get("SEMOB_API_URL")
        model = kwargs.pop("model", None) or os.environ.get("SEMOB_MODEL", "")
        if not url:
            raise BackendError("http backend needs a url (config key backend_url)")
        return HttpBackend(url=url, model=model, **kwargs)
    raise ValueError(f"unknown backend {kind!r}; expected mock or http")
