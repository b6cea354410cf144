"""Uniform completion interface over a live HTTP backend and a scripted
replay backend.

Every agent call goes through ``complete``: the request carries the agent
role, per-role temperature, model id, and prompt text; the response is
raw text. The scripted backend replays canned responses keyed by (agent,
turn index) and is the default for tests and offline runs — with it and
a fixed config, an entire pipeline run is reproducible. Requests and
responses are appended to a JSON-lines transcript for audit.

Model responses that should be JSON frequently arrive wrapped in
Markdown code fences; ``parse_fenced_json`` strips one leading/trailing
fence (with optional language tag) before parsing.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from string import Template
from typing import Callable, Mapping, Optional, Protocol

import requests
import yaml

logger = logging.getLogger(__name__)


class Agent(str, Enum):
    PROBLEM_FORMULATOR = "problem_formulator"
    DATA_ENGINEER = "data_engineer"
    ANALYST = "analyst"
    CRITIC = "critic"
    WRITER = "writer"


#: Per-role sampling temperature: creative ideation runs hot, code
#: generation and review run cold, prose generation in between.
DEFAULT_TEMPERATURES: dict[Agent, float] = {
    Agent.PROBLEM_FORMULATOR: 0.7,
    Agent.DATA_ENGINEER: 0.0,
    Agent.ANALYST: 0.0,
    Agent.CRITIC: 0.0,
    Agent.WRITER: 0.3,
}

DEFAULT_MAX_TOKENS = 4096
DEFAULT_API_KEY_ENV = "ANTHROPIC_API_KEY"


class GatewayError(Exception):
    pass


class AuthMissing(GatewayError):
    pass


class BackendExhausted(GatewayError):
    pass


class Unscripted(GatewayError):
    pass


class PromptMissing(GatewayError):
    pass


class JsonParseError(GatewayError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


@dataclass(frozen=True)
class CompletionRequest:
    agent: Agent
    system_prompt: str
    user_message: str
    temperature: float
    model_id: str
    max_tokens: int = DEFAULT_MAX_TOKENS

    @staticmethod
    def build(
        agent: Agent,
        system_prompt: str,
        user_message: str,
        model_id: str,
        temperature: Optional[float] = None,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> "CompletionRequest":
        if temperature is None:
            temperature = DEFAULT_TEMPERATURES[agent]
        return CompletionRequest(
            agent=agent,
            system_prompt=system_prompt,
            user_message=user_message,
            temperature=temperature,
            model_id=model_id,
            max_tokens=max_tokens,
        )


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


class ScriptedBackend:
    """Deterministic replay backend: (agent, turn index) -> canned text.

    Turn indices advance per agent as requests arrive. In strict mode an
    unscripted request is an error; otherwise it returns an empty string.
    """

    def __init__(self, responses: Mapping[str, list[str]], strict: bool = True):
        self._responses = {str(k): list(v) for k, v in responses.items()}
        self.strict = strict
        self._turns: dict[str, int] = {}
        self.requests: list[CompletionRequest] = []

    @staticmethod
    def from_file(path: str | Path, strict: bool = True) -> "ScriptedBackend":
        """Load responses from YAML: agent -> list of turns. A turn is
        either inline text or ``{file: name}`` read relative to the YAML."""
        path = Path(path)
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        if not isinstance(doc, Mapping):
            raise GatewayError(f"{path}: scripted-responses file must map agent -> list of turns")
        responses: dict[str, list[str]] = {}
        for agent, turns in doc.items():
            resolved = []
            for turn in turns or []:
                if isinstance(turn, Mapping) and "file" in turn:
                    resolved.append((path.parent / str(turn["file"])).read_text(encoding="utf-8"))
                else:
                    resolved.append(str(turn))
            responses[str(agent)] = resolved
        return ScriptedBackend(responses, strict=strict)

    def complete(self, request: CompletionRequest) -> str:
        agent = request.agent.value
        turn = self._turns.get(agent, 0)
        self._turns[agent] = turn + 1
        self.requests.append(request)
        turns = self._responses.get(agent, [])
        if turn >= len(turns):
            if self.strict:
                raise Unscripted(f"no scripted response for ({agent}, turn {turn})")
            logger.warning("unscripted request for (%s, turn %d); returning empty", agent, turn)
            return ""
        return turns[turn]


#: (url, headers, payload) -> (status_code, parsed_json_or_None)
HttpPost = Callable[[str, dict, dict], tuple[int, Optional[dict]]]

_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 529}


def _requests_post(url: str, headers: dict, payload: dict, timeout: float = 120.0) -> tuple[int, Optional[dict]]:
    response = requests.post(url, headers=headers, json=payload, timeout=timeout)
    try:
        return response.status_code, response.json()
    except ValueError:
        return response.status_code, None


class LiveBackend:
    """HTTPS chat-completion client with bounded retry and backoff.

    The provider API key is read from an environment variable (name
    configurable); a missing key fails before any network traffic.
    """

    def __init__(
        self,
        endpoint: str = "https://api.anthropic.com/v1/messages",
        api_key_env: str = DEFAULT_API_KEY_ENV,
        max_attempts: int = 3,
        backoff_base: float = 2.0,
        post: Optional[HttpPost] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._post = post or _requests_post
        self._sleep = sleep

    def complete(self, request: CompletionRequest) -> str:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise AuthMissing(f"environment variable {self.api_key_env} is not set")
        headers = {
            "x-api-key": api_key,
            "anthropic-version": "2023-06-01",
            "content-type": "application/json",
        }
        payload = {
            "model": request.model_id,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "system": request.system_prompt,
            "messages": [{"role": "user", "content": request.user_message}],
        }
        last_error = "no attempts made"
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                status, body = self._post(self.endpoint, headers, payload)
            except Exception as exc:
                last_error = f"transport error: {exc}"
                logger.warning("completion attempt %d failed: %s", attempt + 1, exc)
                continue
            if status == 200 and isinstance(body, dict):
                return _extract_text(body)
            last_error = f"HTTP {status}"
            if status not in _RETRYABLE_STATUS:
                raise BackendExhausted(f"non-retryable response: {last_error}")
            logger.warning("completion attempt %d got %s; retrying", attempt + 1, last_error)
        raise BackendExhausted(f"{self.max_attempts} attempts failed; last error: {last_error}")


def _extract_text(body: dict) -> str:
    content = body.get("content")
    if isinstance(content, list):
        return "".join(
            block.get("text", "") for block in content if isinstance(block, dict)
        )
    if isinstance(content, str):
        return content
    raise BackendExhausted(f"response carries no text content: {list(body)}")


class Transcript:
    """Append-only JSON-lines record of every request/response pair."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def record(self, request: CompletionRequest, response: str) -> None:
        entry = {
            "ts": time.time(),
            "agent": request.agent.value,
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "system_prompt": request.system_prompt,
            "user_message": request.user_message,
            "response": response,
        }
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")


def complete(
    request: CompletionRequest, backend: Backend, transcript: Optional[Transcript] = None
) -> str:
    response = backend.complete(request)
    logger.info("%s completion: %d chars in, %d chars out",
                request.agent.value, len(request.user_message), len(response))
    if transcript is not None:
        transcript.record(request, response)
    return response


def parse_fenced_json(text: str):
    """Parse JSON, tolerating one wrapping Markdown code fence."""
    stripped = text.strip()
    if stripped.startswith("```"):
        first_newline = stripped.find("\n")
        if first_newline != -1 and stripped.endswith("```"):
            stripped = stripped[first_newline + 1 : -3].strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise JsonParseError(f"response is not valid JSON: {exc.msg}", offset=exc.pos) from exc


def load_agent_prompt(
    agent: Agent, prompt_dir: str | Path, context: Optional[Mapping[str, str]] = None
) -> str:
    """Load an agent's system prompt from its YAML file, substituting
    ``$variable`` placeholders from the run context."""
    path = Path(prompt_dir) / f"{agent.value}.yaml"
    if not path.exists():
        raise PromptMissing(f"no prompt file at {path}")
    doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(doc, Mapping) or "system_prompt" not in doc:
        raise PromptMissing(f"{path}: expected a mapping with a 'system_prompt' key")
    prompt = str(doc["system_prompt"])
    return Template(prompt).safe_substitute(dict(context or {}))
