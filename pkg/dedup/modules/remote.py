"""
Client for a remote text-embeddings API.

Frames of a trace are joined with newlines into one string and sent as
``{"model": ..., "input": [...]}``; the service answers
``{"data": [{"embedding": [...]}]}``. Vectors are cached by content hash in
memory and, optionally, in a JSON-lines file.
"""

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from dedup.config.schema import RemoteConfig
from dedup.core.trace import StackTrace, content_hash
from dedup.exceptions import OfflineError, RemoteDimensionError, RemoteEmbeddingError
from dedup.models.embedder import TraceEmbedding

FRAME_DELIMITER = "\n"


def trace_to_text(trace: StackTrace) -> str:
    return FRAME_DELIMITER.join(trace.frame_keys)


class RemoteEmbedderClient:
    """
    Thread-safe embeddings client with retries and a shared cache.

    Args:
        config: Endpoint, credentials, retry and parallelism settings
        offline: Refuse every request that the cache cannot answer
    """

    def __init__(self, config: RemoteConfig, offline: Optional[bool] = None):
        self.config = config
        self.offline = (not config.enabled) if offline is None else offline
        self.dimension = config.dimension
        self.logger = logging.getLogger(__name__)
        self.requests_sent = 0
        self._cache: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self._cache_path = Path(config.cache_file) if config.cache_file else None
        self._session: Optional[requests.Session] = None
        if self._cache_path and self._cache_path.exists():
            self._load_cache()

    def _load_cache(self) -> None:
        with open(self._cache_path, "r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    entry = json.loads(line)
                    self._cache[entry["hash"]] = np.asarray(entry["vector"], dtype=np.float32)
        self.logger.info(f"Loaded {len(self._cache)} cached remote embeddings from {self._cache_path}")

    def _store(self, key: str, vector: np.ndarray) -> None:
        with self._lock:
            self._cache[key] = vector
            if self._cache_path:
                self._cache_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self._cache_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"hash": key, "vector": vector.tolist()}) + "\n")

    @property
    def session(self) -> requests.Session:
        if self._session is None:
            retry = Retry(
                total=self.config.max_retries,
                backoff_factor=self.config.backoff_factor,
                status_forcelist=(429, 500, 502, 503, 504),
                allowed_methods=frozenset(["POST"]),
                raise_on_status=False,
            )
            session = requests.Session()
            session.mount("http://", HTTPAdapter(max_retries=retry, pool_maxsize=self.config.parallelism))
            session.mount("https://", HTTPAdapter(max_retries=retry, pool_maxsize=self.config.parallelism))
            if self.config.api_key:
                session.headers["Authorization"] = f"Bearer {self.config.api_key}"
            self._session = session
        return self._session

    def _check_dimension(self, vector: np.ndarray) -> None:
        with self._lock:
            if self.dimension is None:
                self.dimension = int(vector.shape[0])
            elif vector.shape[0] != self.dimension:
                raise RemoteDimensionError(
                    f"service returned {vector.shape[0]} dimensions, expected {self.dimension}"
                )

    def _request(self, text: str) -> np.ndarray:
        if self.offline:
            raise OfflineError("remote embeddings are disabled; refusing to send report data")
        if not self.config.endpoint:
            raise RemoteEmbeddingError("no remote embeddings endpoint configured")
        payload = {"model": self.config.model, "input": [text]}
        try:
            with self._lock:
                self.requests_sent += 1
            response = self.session.post(self.config.endpoint, json=payload, timeout=self.config.timeout)
            response.raise_for_status()
            body = response.json()
        except requests.RequestException as e:
            raise RemoteEmbeddingError(f"remote embedding request failed: {e}") from e
        except ValueError as e:
            raise RemoteEmbeddingError(f"remote embedding response is not JSON: {e}") from e

        try:
            vector = np.asarray(body["data"][0]["embedding"], dtype=np.float32)
        except (KeyError, IndexError, TypeError) as e:
            raise RemoteEmbeddingError(f"unexpected response layout: {e}") from e
        if vector.ndim != 1 or vector.shape[0] == 0:
            raise RemoteDimensionError("service returned an empty or nested embedding")
        return vector

    def embed(self, trace: StackTrace) -> TraceEmbedding:
        """Embedding of one trace, served from cache when the content was seen before."""
        key = content_hash(trace).hex
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return TraceEmbedding(cached, trace.report_id)
        vector = self._request(trace_to_text(trace))
        self._check_dimension(vector)
        self._store(key, vector)
        return TraceEmbedding(vector, trace.report_id)

    def embed_many(self, traces: Sequence[StackTrace]) -> List[TraceEmbedding]:
        """Embed traces with up to ``parallelism`` requests in flight."""
        if self.config.parallelism == 1 or len(traces) <= 1:
            return [self.embed(t) for t in traces]
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            return list(pool.map(self.embed, traces))

    def close(self) -> None:
        if self._session is not None:
            self._session.close()
            self._session = None


def remote_embed(trace: StackTrace, client: RemoteEmbedderClient) -> TraceEmbedding:
    return client.embed(trace)
