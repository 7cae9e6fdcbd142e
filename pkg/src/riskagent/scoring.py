"""LLM scoring of news: prompt builders, chat-completion client, response
parser and a resumable JSONL score store."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol

from .data import NewsRecord
from .errors import ConfigError, DataError, ScoreTimeoutError, TransportError

logger = logging.getLogger(__name__)

SENTIMENT_SYSTEM_PROMPT = (
    "You are a financial expert with stock recommendation experience. Based on a specific "
    "stock, score for range from 1 to 5, where 1 is negative, 2 is somewhat negative, 3 is "
    "neutral, 4 is somewhat positive, 5 is positive"
)
RISK_SYSTEM_PROMPT = (
    "You are a financial expert specializing in risk assessment for stock recommendations. "
    "Based on a specific stock, provide a risk score from 1 to 5, where: 1 indicates very "
    "low risk, 2 indicates low risk, 3 indicates moderate risk (default if the news lacks "
    "any clear indication of risk), 4 indicates high risk, and 5 indicates very high risk."
)
ANSWER_INSTRUCTION = "Answer with a single integer 1-5 on the first line."
KINDS = ("sentiment", "risk")
WHICH = ("sentiment", "risk", "both")

ENV_API_KEY = "RISKAGENT_API_KEY"
ENV_BASE_URL = "RISKAGENT_BASE_URL"
ENV_MODEL = "RISKAGENT_MODEL"


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system},
            {"role": "user", "content": self.user},
        ]


def _user_text(record: NewsRecord) -> str:
    lines = [f"Ticker: {record.ticker}", f"Date: {record.date.isoformat()}"]
    lines.append(f"Headline: {record.headline}")
    if record.body.strip():
        lines.append(f"Body: {record.body}")
    lines += ["", ANSWER_INSTRUCTION]
    return "\n".join(lines)


def build_sentiment_prompt(record: NewsRecord) -> Prompt:
    return Prompt(SENTIMENT_SYSTEM_PROMPT, _user_text(record))


def build_risk_prompt(record: NewsRecord) -> Prompt:
    return Prompt(RISK_SYSTEM_PROMPT, _user_text(record))


PROMPT_BUILDERS = {"sentiment": build_sentiment_prompt, "risk": build_risk_prompt}


# --------------------------------------------------------------------------
# parsing

_MARKDOWN = re.compile(r"[*_`#>~|]")
_RANGE = re.compile(r"\b1\s*(?:-|–|—|to)\s*5\b", re.IGNORECASE)
_OUT_OF = re.compile(r"\b(\d+)\s*(?:/|out\s+of)\s*5\b", re.IGNORECASE)
_LABELLED = re.compile(r"\b(?:score|rating|risk|sentiment|answer)\b[^\d\n]{0,20}?(\d+)(?![\d.,]\d)", re.IGNORECASE)
_STANDALONE = re.compile(r"(?<![\w.])(\d+)(?![\w]|[.,]\d)")


def parse_score(raw: Optional[str]) -> Optional[int]:
    """First standalone integer of the reply if it lies in 1..5, else None.

    Markdown decoration and "1-5"/"1 to 5" scale mentions are ignored, and
    explicit "k/5", "k out of 5" or "Score: k" forms take precedence.
    """
    if not raw:
        return None
    text = _MARKDOWN.sub(" ", raw)
    text = _RANGE.sub(" ", text)
    for pattern in (_OUT_OF, _LABELLED, _STANDALONE):
        m = pattern.search(text)
        if m:
            value = int(m.group(1))
            return value if 1 <= value <= 5 else None
    return None


# --------------------------------------------------------------------------
# transport


@dataclass
class EndpointConfig:
    base_url: str = ""
    model_name: str = ""
    api_key: str = field(default="", repr=False)
    max_in_flight: int = 4
    retry_budget: int = 3
    timeout: float = 30.0
    backoff_base: float = 0.5
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.retry_budget < 0:
            raise ConfigError("retry_budget must be >= 0")

    def with_env_overrides(self, environ: Mapping[str, str] = os.environ) -> "EndpointConfig":
        out = EndpointConfig(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.api_key = environ.get(ENV_API_KEY, out.api_key)
        out.base_url = environ.get(ENV_BASE_URL, out.base_url)
        out.model_name = environ.get(ENV_MODEL, out.model_name)
        return out

    @property
    def model_id(self) -> str:
        return self.model_name or "unknown"


class Transport(Protocol):
    def __call__(self, payload: dict, timeout: float) -> tuple[int, dict]: ...


def chat_payload(cfg: EndpointConfig, prompt: Prompt) -> dict:
    return {"model": cfg.model_name, "messages": prompt.messages(), "temperature": cfg.temperature}


class HttpTransport:
    """POSTs to ``{base_url}/chat/completions`` with a bearer token."""

    def __init__(self, cfg: EndpointConfig):
        import httpx

        if not cfg.base_url:
            raise ConfigError("endpoint base_url is not configured")
        self._httpx = httpx
        self._url = cfg.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._client = httpx.Client(headers=headers)

    def __call__(self, payload, timeout):
        httpx = self._httpx
        try:
            resp = self._client.post(self._url, json=payload, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise TimeoutError(str(exc)) from exc
        except httpx.TransportError as exc:
            raise ConnectionError(str(exc)) from exc
        try:
            body = resp.json()
        except ValueError:
            body = {}
        return resp.status_code, body

    def close(self):
        self._client.close()


def message_content(body: dict) -> str:
    try:
        return body["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError):
        raise TransportError("malformed chat-completion response", status=200) from None


def _transient(status: int) -> bool:
    return status == 429 or status == 408 or status >= 500


@dataclass
class RequestStats:
    requests: int = 0
    retries: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, requests=0, retries=0):
        with self._lock:
            self.requests += requests
            self.retries += retries


class ChatClient:
    """Bounded-concurrency client with exponential backoff on transient errors."""

    def __init__(self, cfg: EndpointConfig, transport: Transport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self.transport = transport if transport is not None else HttpTransport(cfg)
        self.stats = RequestStats()
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._sleep = sleep

    def request(self, prompt: Prompt) -> str:
        payload = chat_payload(self.cfg, prompt)
        last_status = None
        timed_out = False
        attempts = self.cfg.retry_budget + 1
        for attempt in range(attempts):
            if attempt:
                self.stats.add(retries=1)
                self._sleep(self.cfg.backoff_base * 2 ** (attempt - 1))
            self.stats.add(requests=1)
            try:
                with self._slots:
                    status, body = self.transport(payload, self.cfg.timeout)
            except TimeoutError:
                timed_out, last_status = True, None
                continue
            except ConnectionError:
                timed_out, last_status = False, None
                continue
            if status == 200:
                return message_content(body)
            timed_out, last_status = False, status
            if not _transient(status):
                raise TransportError(f"endpoint returned HTTP {status}", status=status, attempts=attempt + 1)
        if timed_out:
            raise ScoreTimeoutError(f"request timed out after {attempts} attempts", attempts=attempts)
        raise TransportError(
            f"request failed after {attempts} attempts (last status {last_status})",
            status=last_status,
            attempts=attempts,
        )


def request_score(cfg: EndpointConfig, prompt: Prompt, transport: Transport | None = None,
                  client: ChatClient | None = None) -> str:
    client = client or ChatClient(cfg, transport)
    return client.request(prompt)


class MockTransport:
    """Replays canned replies from a script.

    Each script entry may carry ``ticker``, ``date`` and ``kind`` filters
    (missing = wildcard) and a ``responses`` list; items are reply strings,
    ``{"status": code}`` or ``{"timeout": true}``. Replies are consumed per
    (ticker, date, kind) so results do not depend on request interleaving;
    the last item repeats once the list is exhausted.
    """

    _TICKER = re.compile(r"^Ticker: (.*)$", re.MULTILINE)
    _DATE = re.compile(r"^Date: (.*)$", re.MULTILINE)

    def __init__(self, entries: Iterable[dict], default: str | None = None, delay: float = 0.0):
        self.entries = []
        for entry in entries:
            entry = dict(entry)
            if "response" in entry:
                entry.setdefault("responses", [entry.pop("response")])
            if not entry.get("responses"):
                raise ConfigError(f"mock entry without responses: {entry}")
            self.entries.append(entry)
        self.default = default
        self.delay = delay
        self.calls: list[tuple[str, str, str]] = []
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self._cursor: dict[tuple, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_jsonl(cls, path: str | Path, **kw) -> "MockTransport":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"mock script not found: {path}")
        entries, default = [], None
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if "default" in obj and len(obj) == 1:
                default = obj["default"]
            else:
                entries.append(obj)
        return cls(entries, default=default, **kw)

    def _match(self, ticker, day, kind):
        best, best_spec = None, -1
        for entry in self.entries:
            keys = (("ticker", ticker), ("date", day), ("kind", kind))
            if all(entry.get(k, v) == v for k, v in keys):
                spec = sum(k in entry for k, _ in keys)
                if spec > best_spec:
                    best, best_spec = entry, spec
        return best

    def __call__(self, payload, timeout):
        system, user = payload["messages"][0]["content"], payload["messages"][1]["content"]
        kind = "risk" if system == RISK_SYSTEM_PROMPT else "sentiment"
        ticker = self._TICKER.search(user).group(1)
        day = self._DATE.search(user).group(1)
        key = (ticker, day, kind)
        with self._lock:
            self.calls.append(key)
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
            entry = self._match(ticker, day, kind)
            idx = self._cursor.get(key, 0)
            self._cursor[key] = idx + 1
        try:
            if self.delay:
                time.sleep(self.delay)
            if entry is None:
                if self.default is None:
                    return 404, {"error": f"no mock reply for {key}"}
                item = self.default
            else:
                replies = entry["responses"]
                item = replies[min(idx, len(replies) - 1)]
            if isinstance(item, dict):
                if item.get("timeout"):
                    raise TimeoutError("mock timeout")
                if "status" in item and item["status"] != 200:
                    return int(item["status"]), {}
                item = item.get("content", "")
            return 200, {"choices": [{"message": {"role": "assistant", "content": str(item)}}]}
        finally:
            with self._lock:
                self.in_flight -= 1


# --------------------------------------------------------------------------
# score store


@dataclass(frozen=True)
class SignalScore:
    ticker: str
    date: date
    sentiment: Optional[int]
    risk: Optional[int]
    model_id: str
    raw_digest: str

    def __post_init__(self):
        for name in KINDS:
            v = getattr(self, name)
            if v is not None and v not in (1, 2, 3, 4, 5):
                raise DataError(f"{name} score {v!r} outside 1..5")

    @property
    def key(self) -> tuple[str, date]:
        return (self.ticker, self.date)

    def to_json(self) -> dict:
        return {
            "ticker": self.ticker,
            "date": self.date.isoformat(),
            "sentiment": self.sentiment,
            "risk": self.risk,
            "model_id": self.model_id,
            "raw_digest": self.raw_digest,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SignalScore":
        return cls(
            obj["ticker"],
            date.fromisoformat(obj["date"]),
            obj.get("sentiment"),
            obj.get("risk"),
            obj.get("model_id", ""),
            obj.get("raw_digest", ""),
        )


def load_scores_jsonl(path: str | Path) -> list[SignalScore]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"score file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(SignalScore.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            # a torn final line from an interrupted run is dropped
            logger.warning("%s:%d: skipping unreadable score line (%s)", path, lineno, exc)
    return out


def write_scores_jsonl(scores: Iterable[SignalScore], path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for s in sorted(scores, key=lambda s: s.key):
            fh.write(json.dumps(s.to_json()) + "\n")
    os.replace(tmp, path)


def digest(raws: Mapping[str, Optional[str]]) -> str:
    blob = json.dumps({k: raws.get(k) for k in KINDS}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class ScoreError:
    ticker: str
    date: date
    kind: str
    message: str
    status: Optional[int] = None

    def to_json(self) -> dict:
        return {"ticker": self.ticker, "date": self.date.isoformat(), "kind": self.kind,
                "message": self.message, "status": self.status}


@dataclass
class ScoreRun:
    scores: list[SignalScore]
    errors: list[ScoreError]
    requested: list[tuple[str, date]]
    stats: RequestStats


def _kinds(which: str) -> tuple[str, ...]:
    if which not in WHICH:
        raise ConfigError(f"which must be one of {WHICH}, got {which!r}")
    return KINDS if which == "both" else (which,)


def score_news(
    cfg: EndpointConfig,
    sampled: Mapping[tuple[str, date], NewsRecord],
    which: str = "both",
    store: str | Path | None = None,
    transport: Transport | None = None,
    client: ChatClient | None = None,
) -> ScoreRun:
    """Score every sampled record; keys already present in ``store`` are skipped.

    Finished records are appended to ``store`` as they complete; on normal
    exit the file is rewritten in canonical (ticker, date) order so repeat
    runs give byte-identical files. Transport failures are collected per
    record instead of aborting the batch.
    """
    kinds = _kinds(which)
    client = client or ChatClient(cfg, transport)
    done: dict[tuple[str, date], SignalScore] = {}
    store_path = Path(store) if store is not None else None
    if store_path is not None and store_path.exists():
        for s in load_scores_jsonl(store_path):
            done[s.key] = s
    pending = [key for key in sorted(sampled) if key not in done]

    def job(key):
        rec = sampled[key]
        raws: dict[str, Optional[str]] = {}
        for kind in kinds:
            raws[kind] = client.request(PROMPT_BUILDERS[kind](rec))
        return SignalScore(
            rec.ticker,
            rec.date,
            parse_score(raws.get("sentiment")),
            parse_score(raws.get("risk")),
            cfg.model_id,
            digest(raws),
        )

    errors: list[ScoreError] = []
    fh = store_path.open("a", encoding="utf-8") if store_path is not None else None
    pool = ThreadPoolExecutor(max_workers=cfg.max_in_flight)
    try:
        futures = {pool.submit(job, key): key for key in pending}
        for fut in as_completed(futures):
            key = futures[fut]
            try:
                score = fut.result()
            except TransportError as exc:
                errors.append(ScoreError(key[0], key[1], which, str(exc), exc.status))
                continue
            done[key] = score
            if fh is not None:
                fh.write(json.dumps(score.to_json()) + "\n")
                fh.flush()
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        if fh is not None:
            fh.close()
    if store_path is not None:
        write_scores_jsonl(done.values(), store_path)
    errors.sort(key=lambda e: (e.ticker, e.date))
    scores = sorted((done[k] for k in done if k in sampled), key=lambda s: s.key)
    return ScoreRun(scores, errors, pending, client.stats)
