"""Raw content vectors for items, served by interchangeable providers.

Three provider kinds:

* ``mock``: deterministic hashed bag-of-tokens vectors, no external service.
* ``file``: precomputed vectors keyed by item id, read from a vector cache.
* ``http``: POST ``{"text": ...}`` to an embedding endpoint and read back
  ``{"vector": [...]}``.

Vectors are cached on disk in the binary table format plus a JSON sidecar
recording provider kind, width, and hash seed.
"""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import store

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class ProviderError(RuntimeError):
    """Transport failure or malformed response from an embedding service."""


def fnv1a64(data: bytes, seed: int = 0) -> int:
    """Seeded 64-bit FNV-1a; the seed is xor-folded into the offset basis."""
    h = (FNV_OFFSET ^ (seed & _MASK64)) & _MASK64
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def mock_embed(text: str, dim: int = 256, hash_seed: int = 0) -> np.ndarray:
    """Hashed bag-of-tokens vector: mean of token one-hots, L2-normalized.

    Tokens are lowercased alphanumeric runs; each token lands in bucket
    ``fnv1a64(token) % dim``.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    tokens = tokenize(text)
    if not tokens:
        raise ValueError(f"no tokens after splitting: {text!r}")
    vec = np.zeros(dim)
    weight = 1.0 / len(tokens)
    for tok in tokens:
        vec[fnv1a64(tok.encode("utf-8"), hash_seed) % dim] += weight
    return vec / np.linalg.norm(vec)


class MockContentProvider:
    """In-process provider backed by :func:`mock_embed`."""

    kind = "mock"

    def __init__(self, dim: int = 256, hash_seed: int = 0):
        self.dim = dim
        self.hash_seed = hash_seed

    def embed(self, text: str, key: int | None = None) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        return mock_embed(text, self.dim, self.hash_seed)


class FileContentProvider:
    """Provider serving precomputed vectors keyed by item id."""

    kind = "file"

    def __init__(self, path: str | Path):
        cache = VectorCache.load(path)
        self.dim = cache.dim
        self.hash_seed = cache.hash_seed
        self._vectors = cache.vectors

    def embed(self, text: str, key: int | None = None) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        if key is None or key not in self._vectors:
            raise KeyError(f"unknown item key {key!r} in file provider")
        return self._vectors[key].astype(np.float64)


class HttpContentProvider:
    """Provider that POSTs text to an embedding service.

    Request body is ``{"text": string}``; the response must be 200 with
    body ``{"vector": [floats]}``.  Transport errors and malformed
    responses are retried with exponential backoff, then surfaced as
    :class:`ProviderError`.
    """

    kind = "http"

    def __init__(self, url: str, dim: int | None = None, timeout: float = 30.0,
                 retries: int = 3, backoff: float = 0.5):
        self.url = url
        self.dim = dim
        self.hash_seed = None
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def embed(self, text: str, key: int | None = None) -> np.ndarray:
        import requests

        if not text:
            raise ValueError("cannot embed empty text")
        last = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(self.url, json={"text": text},
                                     timeout=self.timeout)
                if resp.status_code != 200:
                    raise ProviderError(f"embed service returned {resp.status_code}")
                vec = np.asarray(resp.json()["vector"], dtype=np.float64)
                if vec.ndim != 1 or vec.size == 0:
                    raise ProviderError("embed service returned a non-vector")
                if self.dim is None:
                    self.dim = vec.size
                elif vec.size != self.dim:
                    raise ProviderError(f"vector width changed: {vec.size} != {self.dim}")
                return vec
            except (ProviderError, requests.RequestException, ValueError,
                    KeyError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise ProviderError(f"embedding failed after {self.retries} attempts: {last}")


def embed_content(provider, text: str, key: int | None = None) -> np.ndarray:
    """Fetch a raw content vector for ``text`` from any provider kind."""
    if not text:
        raise ValueError("cannot embed empty text")
    return provider.embed(text, key=key)


class VectorCache:
    """Item-id keyed float32 vectors with binary-table persistence.

    On disk: the table at ``path`` holds one row per cached item in
    ascending id order; the sidecar ``path.with_suffix('.json')`` records
    provider kind, width, hash seed, and the row-to-item mapping.
    """

    def __init__(self, dim: int, provider_kind: str, hash_seed: int | None = None):
        self.dim = dim
        self.provider_kind = provider_kind
        self.hash_seed = hash_seed
        self.vectors: dict[int, np.ndarray] = {}

    def __contains__(self, item: int) -> bool:
        return item in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, item: int) -> np.ndarray:
        return self.vectors[item]

    def put(self, item: int, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ValueError(f"vector for item {item} has shape {vec.shape}, "
                             f"cache width is {self.dim}")
        self.vectors[int(item)] = vec

    def matrix(self, n_items: int) -> np.ndarray:
        """Dense (n_items, dim) float64 matrix; missing items are zero rows."""
        mat = np.zeros((n_items, self.dim))
        for i, v in self.vectors.items():
            if i < n_items:
                mat[i] = v
        return mat

    def save(self, path: str | Path) -> None:
        path = Path(path)
        items = sorted(self.vectors)
        table = (np.stack([self.vectors[i] for i in items])
                 if items else np.zeros((0, self.dim), dtype=np.float32))
        store.save_table(path, table)
        sidecar = {"kind": self.provider_kind, "dim": self.dim,
                   "hash_seed": self.hash_seed, "items": items}
        with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "VectorCache":
        path = Path(path)
        with open(path.with_suffix(".json"), encoding="utf-8") as fh:
            sidecar = json.load(fh)
        table = store.load_table(path)
        cache = cls(dim=int(sidecar["dim"]), provider_kind=sidecar["kind"],
                    hash_seed=sidecar["hash_seed"])
        items = sidecar["items"]
        if table.shape[0] != len(items):
            raise ValueError(f"{path}: table rows != sidecar items")
        for row, item in zip(table, items):
            cache.vectors[int(item)] = row
        return cache


def warm_cache(provider, catalog, cache_path: str | Path,
               max_inflight: int = 8) -> VectorCache:
    """Ensure every catalog item has a cached vector; resumes partial caches.

    Already-cached items are not re-fetched, so a rerun over a complete
    cache issues zero provider calls.  Fetches run on up to ``max_inflight``
    threads; rows are written back in ascending item id order regardless of
    completion order.
    """
    cache_path = Path(cache_path)
    if cache_path.exists():
        cache = VectorCache.load(cache_path)
        if cache.provider_kind != provider.kind:
            raise ValueError(f"cache at {cache_path} was built by provider "
                             f"{cache.provider_kind!r}, not {provider.kind!r}")
        if provider.dim is not None and cache.dim != provider.dim:
            raise ValueError(f"cache width {cache.dim} != provider width "
                             f"{provider.dim}")
    else:
        dim = provider.dim
        if dim is None:
            if not catalog.content:
                raise ValueError("cannot size a cache from an empty catalog "
                                 "and a width-agnostic provider")
            first = min(catalog.content)
            probe = provider.embed(catalog.content[first], key=first)
            dim = probe.size
        cache = VectorCache(dim=dim, provider_kind=provider.kind,
                            hash_seed=getattr(provider, "hash_seed", None))

    missing = sorted(i for i in catalog.content if i not in cache)
    if missing:
        def fetch(item):
            return item, provider.embed(catalog.content[item], key=item)

        try:
            with ThreadPoolExecutor(max_workers=max(1, max_inflight)) as pool:
                for item, vec in pool.map(fetch, missing):
                    cache.put(item, vec)
        except Exception:
            cache.save(cache_path)  # keep partial progress for the next resume
            raise
        logger.info("cached %d new content vectors (%d total)",
                    len(missing), len(cache))
    cache.save(cache_path)
    return cache
