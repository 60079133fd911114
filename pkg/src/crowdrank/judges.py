"""Judge gateway: responses and pairwise verdicts from pluggable backends.

Three backends share one small protocol:

* :class:`SimulatedBackend` draws answers and verdicts from latent model
  profiles.  All randomness comes from hashing ``(seed, call key)``, so the
  order or concurrency of calls never changes a result.
* :class:`ReplayBackend` serves a previously recorded vote/response log and
  fails on anything it has not seen.
* :class:`RemoteBackend` talks to a chat-completion style HTTP endpoint.

:class:`JudgeGateway` sits in front of a backend, caches responses, picks the
presentation order and writes votes to the :class:`VoteStore`.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Mapping, Protocol, Sequence

from .core import ModelId, Question, ResponseRecord, VoteRecord, Verdict, pair_key
from .errors import BackendUnavailable, MalformedVerdict, SelfJudgeRejected, UnknownModel
from .persistence import ResponseStore, VoteStore, read_jsonl

log = logging.getLogger(__name__)

_STD_NORMAL = NormalDist()


def hash_unit(seed: int, *parts: object) -> float:
    """Deterministic uniform draw in (0, 1) keyed by ``seed`` and ``parts``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode())
    (n,) = struct.unpack(">Q", h.digest())
    return (n + 0.5) / 2.0**64


def hash_normal(seed: int, *parts: object) -> float:
    return _STD_NORMAL.inv_cdf(hash_unit(seed, *parts))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass
class LatentProfile:
    """Ground truth for one simulated model.

    ``self_bias`` is the log-odds bonus this model, acting as a judge, gives
    to contestants of its own ``family``; ``verbosity_bias`` is its log-odds
    preference per ``length_scale`` tokens of extra answer length.
    ``length_mean`` and ``markdown_rate`` shape the answers it writes.
    """

    model: str
    skill: dict[str, float]
    self_bias: float = 0.0
    family: str | None = None
    verbosity_bias: float = 0.0
    length_mean: float = 120.0
    markdown_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.self_bias < 0:
            raise ValueError("self_bias must be >= 0")
        if not all(math.isfinite(v) for v in self.skill.values()):
            raise ValueError(f"non-finite skill for {self.model}")

    @property
    def family_tag(self) -> str:
        return self.family or self.model

    def to_dict(self) -> dict:
        return {
            "model": self.model, "skill": dict(self.skill), "self_bias": self.self_bias,
            "family": self.family, "verbosity_bias": self.verbosity_bias,
            "length_mean": self.length_mean, "markdown_rate": self.markdown_rate,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LatentProfile":
        return cls(**{k: d[k] for k in d})


class JudgeBackend(Protocol):
    def get_response(self, model: str, q: Question) -> ResponseRecord: ...

    def judge(
        self, judge: str, q: Question, resp_a: ResponseRecord, resp_b: ResponseRecord, swapped: bool
    ) -> Verdict:
        """Verdict relative to ``(resp_a, resp_b)``; ``swapped`` means b is shown first."""
        ...


_FILLER = (
    "the answer follows from a careful reading of the question and the relevant facts "
    "which we combine step by step to reach a conclusion that is easy to verify"
).split()


class SimulatedBackend:
    """Latent-skill simulator.

    A response to question ``q`` has quality ``skill[q.dimension] + noise``
    with ``noise ~ N(0, noise_sd)`` fixed by ``(seed, model, q.id)``.
    A judge prefers ``a`` with probability
    ``sigmoid((quality_a - quality_b + bias) / temperature)``; with
    ``temperature == 0`` the better answer always wins.
    """

    def __init__(
        self,
        profiles: Sequence[LatentProfile],
        seed: int = 0,
        noise_sd: float = 0.5,
        noise_by_question: Mapping[str, float] | None = None,
        temperature: float = 1.0,
        length_scale: float = 100.0,
        position_bias: float = 0.0,
    ):
        self.profiles = {p.model: p for p in profiles}
        self.seed = int(seed)
        self.noise_sd = float(noise_sd)
        self.noise_by_question = dict(noise_by_question or {})
        self.temperature = float(temperature)
        self.length_scale = float(length_scale)
        self.position_bias = float(position_bias)

    def profile(self, model: str) -> LatentProfile:
        try:
            return self.profiles[model]
        except KeyError:
            raise UnknownModel(model) from None

    def quality(self, model: str, q: Question) -> float:
        p = self.profile(model)
        if q.dimension not in p.skill:
            raise UnknownModel(f"{model} has no skill for dimension {q.dimension!r}")
        sd = self.noise_by_question.get(q.id, self.noise_sd)
        return p.skill[q.dimension] + sd * hash_normal(self.seed, "quality", model, q.id)

    def _text(self, p: LatentProfile, q: Question) -> str:
        u = hash_unit(self.seed, "length", p.model, q.id)
        n_words = max(1, int(round(p.length_mean * math.exp(0.3 * _STD_NORMAL.inv_cdf(u)))))
        words = [_FILLER[i % len(_FILLER)] for i in range(n_words)]
        lines = []
        n_md = int(p.markdown_rate * 2 * hash_unit(self.seed, "markdown", p.model, q.id))
        if n_md:
            lines.append("## Answer")
            words[0] = f"**{words[0]}**"
        lines.append(" ".join(words))
        lines.extend(f"- point {i + 1}" for i in range(n_md))
        return "\n".join(lines)

    def get_response(self, model: str, q: Question) -> ResponseRecord:
        p = self.profile(model)
        return ResponseRecord.build(model, q.id, self._text(p, q), self.quality(model, q))

    def preference(self, judge: str, q: Question, resp_a: ResponseRecord, resp_b: ResponseRecord,
                   swapped: bool = False) -> float:
        """Log-odds that ``judge`` prefers ``resp_a`` (before temperature)."""
        j = self.profile(judge)
        qa = resp_a.quality if resp_a.quality is not None else self.quality(resp_a.model, q)
        qb = resp_b.quality if resp_b.quality is not None else self.quality(resp_b.model, q)
        fam = j.family_tag
        own = float(self.profile(resp_a.model).family_tag == fam) - float(
            self.profile(resp_b.model).family_tag == fam
        )
        verbose = (resp_a.style.length - resp_b.style.length) / self.length_scale
        first = -1.0 if swapped else 1.0
        return qa - qb + j.self_bias * own + j.verbosity_bias * verbose + self.position_bias * first

    def judge(self, judge: str, q: Question, resp_a: ResponseRecord, resp_b: ResponseRecord,
              swapped: bool = False) -> Verdict:
        if judge in (resp_a.model, resp_b.model):
            raise SelfJudgeRejected(judge)
        # draw in canonical orientation so judge(a, b) and judge(b, a) mirror each other
        if (resp_a.model, resp_b.model) != pair_key(resp_a.model, resp_b.model):
            return self.judge(judge, q, resp_b, resp_a, not swapped).flipped()
        z = self.preference(judge, q, resp_a, resp_b, swapped)
        if self.temperature == 0:
            return Verdict.WIN_A if z > 0 else Verdict.WIN_B if z < 0 else Verdict.TIE
        u = hash_unit(self.seed, "vote", judge, q.id, resp_a.model, resp_b.model)
        return Verdict.WIN_A if u < sigmoid(z / self.temperature) else Verdict.WIN_B


class ReplayBackend:
    """Serves votes and responses recorded in earlier runs."""

    def __init__(self, votes: Sequence[VoteRecord] = (), responses: Sequence[ResponseRecord] = ()):
        self._votes = {v.key: v for v in votes}
        self._responses = {(r.model, r.question_id): r for r in responses}

    @classmethod
    def from_files(cls, votes_path: str | os.PathLike, responses_path: str | os.PathLike | None = None):
        votes = [VoteRecord.from_dict(r) for r in read_jsonl(votes_path)]
        responses = []
        if responses_path is not None and Path(responses_path).exists():
            responses = [ResponseRecord.from_dict(r) for r in read_jsonl(responses_path)]
        return cls(votes, responses)

    def get_response(self, model: str, q: Question) -> ResponseRecord:
        try:
            return self._responses[(model, q.id)]
        except KeyError:
            raise BackendUnavailable(f"replay log has no response of {model} to {q.id}") from None

    def judge(self, judge: str, q: Question, resp_a: ResponseRecord, resp_b: ResponseRecord,
              swapped: bool = False) -> Verdict:
        key = (judge, q.id, *pair_key(resp_a.model, resp_b.model))
        try:
            v = self._votes[key]
        except KeyError:
            raise BackendUnavailable(f"replay log has no vote for {key}") from None
        return v.oriented(resp_a.model, resp_b.model).verdict


JUDGE_PROMPT = """You are judging two answers to the same question.

[Question]
{question}

[Answer A]
{first}

[Answer B]
{second}

Decide which answer is better. Reply with exactly one token: A, B or TIE."""

_VERDICT_RE = re.compile(r"^\W*(TIE|A|B)\W*$", re.IGNORECASE)


def parse_verdict(text: str) -> str:
    """Parse a judge reply into ``"A"``, ``"B"`` or ``"TIE"``."""
    m = _VERDICT_RE.match(text.strip())
    if not m:
        raise MalformedVerdict(f"unparsable verdict: {text[:80]!r}")
    return m.group(1).upper()


class RemoteBackend:
    """Chat-completion HTTP backend (OpenAI-compatible request/response shape).

    ``model_names`` maps model ids to provider model names; unmapped ids are
    sent as-is.  The API key is read from the environment variable named by
    ``credential_env`` at request time.
    """

    def __init__(
        self,
        endpoint: str,
        credential_env: str | None = None,
        model_names: Mapping[str, str] | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        parse_retries: int = 2,
        backoff: float = 1.0,
        client=None,
    ):
        import httpx

        self.endpoint = endpoint
        self.credential_env = credential_env
        self.model_names = dict(model_names or {})
        self.timeout = timeout
        self.max_retries = max_retries
        self.parse_retries = parse_retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.credential_env:
            key = os.environ.get(self.credential_env)
            if not key:
                raise BackendUnavailable(f"environment variable {self.credential_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, model: str, messages: list[dict]) -> str:
        import httpx

        body = {"model": self.model_names.get(model, model), "messages": messages, "temperature": 0}
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last_exc = exc
                log.warning("request to %s failed (%s), attempt %d", self.endpoint, exc, attempt + 1)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = BackendUnavailable(f"HTTP {resp.status_code}")
                log.warning("HTTP %d from %s, attempt %d", resp.status_code, self.endpoint, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_exc = exc
                continue
        raise BackendUnavailable(f"{self.endpoint}: retries exhausted ({last_exc})")

    def get_response(self, model: str, q: Question) -> ResponseRecord:
        text = self.chat(model, [{"role": "user", "content": q.text}])
        return ResponseRecord.build(model, q.id, text)

    def judge(self, judge: str, q: Question, resp_a: ResponseRecord, resp_b: ResponseRecord,
              swapped: bool = False) -> Verdict:
        if judge in (resp_a.model, resp_b.model):
            raise SelfJudgeRejected(judge)
        first, second = (resp_b, resp_a) if swapped else (resp_a, resp_b)
        prompt = JUDGE_PROMPT.format(question=q.text, first=first.text, second=second.text)
        messages = [{"role": "user", "content": prompt}]
        for attempt in range(self.parse_retries + 1):
            reply = self.chat(judge, messages)
            try:
                token = parse_verdict(reply)
            except MalformedVerdict:
                if attempt == self.parse_retries:
                    raise
                continue
            if token == "TIE":
                return Verdict.TIE
            shown_first_won = token == "A"
            return Verdict.WIN_A if shown_first_won != swapped else Verdict.WIN_B
        raise AssertionError("unreachable")


@dataclass
class JudgeBackendConfig:
    """Backend selection; only the fields of ``kind`` may be set."""

    kind: str = "simulated"
    # simulated
    seed: int | None = None
    noise_sd: float = 0.5
    temperature: float = 1.0
    position_bias: float = 0.0
    profiles: list[LatentProfile] = field(default_factory=list)
    # replay
    log_path: str | None = None
    responses_path: str | None = None
    # remote
    endpoint: str | None = None
    credential_env: str | None = None
    model_names: dict[str, str] = field(default_factory=dict)
    timeout: float = 60.0
    max_retries: int = 3

    _FIELDS = {
        "simulated": {"seed", "noise_sd", "temperature", "position_bias", "profiles"},
        "replay": {"log_path", "responses_path"},
        "remote": {"endpoint", "credential_env", "model_names", "timeout", "max_retries"},
    }

    @classmethod
    def from_dict(cls, d: Mapping) -> "JudgeBackendConfig":
        d = dict(d)
        kind = d.pop("kind", "simulated")
        if kind not in cls._FIELDS:
            raise ValueError(f"unknown backend kind {kind!r}")
        stray = set(d) - cls._FIELDS[kind]
        if stray:
            raise ValueError(f"fields {sorted(stray)} are not valid for a {kind} backend")
        if kind == "simulated":
            d.setdefault("seed", 0)
            d["profiles"] = [LatentProfile.from_dict(p) for p in d.get("profiles", [])]
        if kind == "replay" and not d.get("log_path"):
            raise ValueError("replay backend needs log_path")
        if kind == "remote" and not d.get("endpoint"):
            raise ValueError("remote backend needs endpoint")
        return cls(kind=kind, **d)

    def build(self) -> JudgeBackend:
        if self.kind == "simulated":
            return SimulatedBackend(
                self.profiles, seed=self.seed or 0, noise_sd=self.noise_sd,
                temperature=self.temperature, position_bias=self.position_bias,
            )
        if self.kind == "replay":
            return ReplayBackend.from_files(self.log_path, self.responses_path)
        return RemoteBackend(
            self.endpoint, credential_env=self.credential_env, model_names=self.model_names,
            timeout=self.timeout, max_retries=self.max_retries,
        )


class JudgeGateway:
    """Cache-first front end over a backend and the vote store.

    ``position_mode="random"`` shows the pair in a seed-randomised order per
    dedupe key; ``"both"`` asks both orders and records a tie when the two
    answers disagree.
    """

    def __init__(
        self,
        backend: JudgeBackend,
        store: VoteStore | None = None,
        responses: ResponseStore | None = None,
        order_seed: int = 0,
        position_mode: str = "random",
    ):
        if position_mode not in ("random", "both"):
            raise ValueError(f"unknown position mode {position_mode!r}")
        self.backend = backend
        self.store = store if store is not None else VoteStore()
        self.responses = responses if responses is not None else ResponseStore()
        self.order_seed = order_seed
        self.position_mode = position_mode

    def get_response(self, model: str, q: Question) -> ResponseRecord:
        cached = self.responses.get(model, q.id)
        if cached is not None:
            return cached
        r = self.backend.get_response(model, q)
        self.responses.put(r)
        return r

    def cached_vote(self, judge: str, q: Question, a: str, b: str) -> VoteRecord | None:
        v = self.store.get((judge, q.id, *pair_key(a, b)))
        return v.oriented(a, b) if v is not None else None

    def request_vote(self, judge: str, q: Question, resp_a: ResponseRecord,
                     resp_b: ResponseRecord) -> VoteRecord:
        """Ask the backend for a fresh verdict without touching the store."""
        if judge in (resp_a.model, resp_b.model):
            raise SelfJudgeRejected(f"{judge} cannot judge its own answer")
        lo, hi = pair_key(resp_a.model, resp_b.model)
        swapped = hash_unit(self.order_seed, "order", judge, q.id, lo, hi) < 0.5
        if resp_a.model != lo:
            swapped = not swapped
        verdict = self.backend.judge(judge, q, resp_a, resp_b, swapped)
        if self.position_mode == "both":
            other = self.backend.judge(judge, q, resp_a, resp_b, not swapped)
            if other != verdict:
                verdict = Verdict.TIE
        return VoteRecord(
            ModelId(judge), q.id, resp_a.model, resp_b.model, verdict,
            resp_a.style, resp_b.style, swapped,
        )

    def judge_vote(self, judge: str, q: Question, resp_a: ResponseRecord,
                   resp_b: ResponseRecord) -> VoteRecord:
        cached = self.cached_vote(judge, q, resp_a.model, resp_b.model)
        if cached is not None:
            return cached
        v = self.request_vote(judge, q, resp_a, resp_b)
        self.store.append(v)
        return v
