"""Text-predictor labels from a JSON-lines file or an HTTP endpoint.

Endpoint protocol: POST ``{"prompt": str}`` -> ``{"label": str}``. Responses
are cached in a JSON-lines replay file keyed by the prompt's SHA-256 so that
reruns do not hit the network and produce identical output.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from .graph import LabelSpace
from .labeling import MISSING, UNPARSED, PredictionSet
from .prompts import parse_llm_label

logger = logging.getLogger(__name__)

RETRY_STATUS = {408, 429, 500, 502, 503, 504}


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ReplayCache:
    """Append-only prompt-hash -> raw label store."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._data[rec["key"]] = rec["label"]

    def get(self, prompt: str) -> str | None:
        return self._data.get(prompt_key(prompt))

    def put(self, prompt: str, label: str) -> None:
        key = prompt_key(prompt)
        with self._lock:
            if key in self._data:
                return
            self._data[key] = label
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "label": label}) + "\n")

    def __len__(self):
        return len(self._data)


@dataclass
class FetchResult:
    raw: dict[int, str | None]
    predictions: PredictionSet
    errors: dict[int, str] = field(default_factory=dict)


def _request(client: httpx.Client, url: str, prompt: str, max_attempts: int, backoff: float,
             sleep: Callable[[float], None]) -> tuple[str | None, str | None]:
    """Return ``(raw_label, error)``; retries network errors and retryable statuses."""
    err = None
    for attempt in range(max_attempts):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = client.post(url, json={"prompt": prompt})
        except httpx.HTTPError as exc:
            err = f"{type(exc).__name__}: {exc}"
            continue
        if resp.status_code in RETRY_STATUS:
            err = f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            return None, f"HTTP {resp.status_code}"
        try:
            body = resp.json()
            label = body["label"]
        except (ValueError, KeyError, TypeError):
            return None, "malformed response body"
        if not isinstance(label, str):
            return None, "malformed response body"
        return label, None
    return None, f"gave up after {max_attempts} attempts ({err})"


def fetch_llm_predictions(endpoint_url: str, prompts: Sequence[tuple[int, str]], label_space: LabelSpace,
                          n_nodes: int, *, max_in_flight: int = 4, max_attempts: int = 5, backoff: float = 0.5,
                          timeout: float = 30.0, cache: ReplayCache | None = None,
                          client: httpx.Client | None = None,
                          sleep: Callable[[float], None] = time.sleep) -> FetchResult:
    """Query the endpoint once per ``(node_id, prompt)``; failures become ``UNPARSED``.

    Output is keyed by node id, so completion order never affects results.
    """
    own = client is None
    client = client or httpx.Client(timeout=timeout)
    raw: dict[int, str | None] = {}
    errors: dict[int, str] = {}

    def one(item):
        node, prompt = item
        if cache is not None:
            hit = cache.get(prompt)
            if hit is not None:
                return node, hit, None
        label, err = _request(client, endpoint_url, prompt, max_attempts, backoff, sleep)
        if label is not None and cache is not None:
            cache.put(prompt, label)
        return node, label, err

    try:
        with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as ex:
            for node, label, err in ex.map(one, list(prompts)):
                raw[node] = label
                if err:
                    errors[node] = err
    finally:
        if own:
            client.close()
    for node, err in sorted(errors.items()):
        logger.warning("node %d: %s", node, err)
    labels = np.full(n_nodes, MISSING, dtype=np.int64)
    for node, label in raw.items():
        labels[node] = UNPARSED if label is None else parse_llm_label(label, label_space)
    return FetchResult(dict(sorted(raw.items())), PredictionSet(labels), errors)


def write_predictions(raw: dict[int, str | None], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for node in sorted(raw):
            fh.write(json.dumps({"node_id": int(node), "label": raw[node] or ""}, ensure_ascii=False) + "\n")


def load_predictions(path: str | Path, label_space: LabelSpace, n_nodes: int) -> PredictionSet:
    """Read ``{"node_id", "label"}`` JSON lines; nodes absent from the file are ``MISSING``."""
    labels = np.full(n_nodes, MISSING, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                node, label = int(rec["node_id"]), rec["label"]
            except (ValueError, KeyError, TypeError):
                raise ValueError(f"{path}:{lineno}: expected {{\"node_id\": int, \"label\": str}}") from None
            if not 0 <= node < n_nodes:
                raise ValueError(f"{path}:{lineno}: node id {node} outside graph of {n_nodes} nodes")
            labels[node] = parse_llm_label(label, label_space)
    return PredictionSet(labels)
