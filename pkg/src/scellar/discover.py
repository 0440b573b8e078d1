"""Client for a public single-cell dataset catalog (CellxGene Discover).

Listings come from the collections endpoint and are cached on disk with
a TTL, so repeated browsing is free and a dead network still serves the
last good listing (flagged stale). Downloads stream to a hidden ``.part``
file and rename into place only when complete, resuming over HTTP Range
when a partial file survives from an earlier attempt. The endpoint paths
live in one config record so an upstream API change is a config edit.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field

import requests

from . import catalog as catalog_mod
from .errors import ScellarError

DEFAULT_API_BASE = "https://api.cellxgene.cziscience.com"
COLLECTIONS_PATH = "/curation/v1/collections"
ENV_API_BASE = "SCELLAR_API_BASE"

DEFAULT_CACHE_TTL = 24 * 3600.0
DOWNLOAD_CHUNK = 1 << 16


class NetworkUnavailable(ScellarError):
    """No server reachable and no usable cache."""


class MalformedResponse(ScellarError):
    """The server answered, but not with the shape this client speaks."""


class ChecksumMismatch(ScellarError):
    """Downloaded bytes do not hash to the expected digest."""


class NoAssetAvailable(ScellarError):
    """The dataset is listed but has no downloadable h5ad asset."""


@dataclass(frozen=True)
class RemoteDataset:
    dataset_id: str
    title: str
    h5ad_asset_url: str | None = None
    asset_size_bytes: int | None = None
    sha256: str | None = None


@dataclass(frozen=True)
class RemoteCollection:
    collection_id: str
    name: str
    datasets: tuple[RemoteDataset, ...] = ()


@dataclass
class ListingResult:
    collections: list[RemoteCollection]
    stale: bool  # true when served from cache after a network failure


@dataclass
class DiscoverConfig:
    base_url: str = field(
        default_factory=lambda: os.environ.get(ENV_API_BASE, DEFAULT_API_BASE)
    )
    collections_path: str = COLLECTIONS_PATH
    cache_dir: str = "."
    cache_ttl_seconds: float = DEFAULT_CACHE_TTL
    max_concurrent_downloads: int = 2
    timeout_seconds: float = 30.0


class DiscoverClient:
    def __init__(self, config: DiscoverConfig | None = None):
        self.config = config or DiscoverConfig()
        self._download_slots = threading.Semaphore(self.config.max_concurrent_downloads)

    # -- listing -----------------------------------------------------------

    @property
    def _cache_path(self) -> str:
        return os.path.join(self.config.cache_dir, "collections.json")

    def list_collections(self, name_filter: str = "") -> ListingResult:
        """All collections, optionally filtered by case-insensitive substring.

        A fresh cache (younger than the TTL) is served without touching
        the network. A network failure falls back to any cache present,
        marking the result stale; a malformed server response never falls
        back, because the server is up and the client is the wrong one.
        """
        body, stale = self._listing_body()
        collections = _parse_collections(body)
        needle = name_filter.casefold()
        if needle:
            collections = [c for c in collections if needle in c.name.casefold()]
        return ListingResult(collections=collections, stale=stale)

    def _listing_body(self):
        cached = self._read_cache()
        now = time.time()
        if cached is not None and now - cached["fetched_at"] < self.config.cache_ttl_seconds:
            return cached["body"], False
        url = self.config.base_url.rstrip("/") + self.config.collections_path
        try:
            resp = requests.get(url, timeout=self.config.timeout_seconds)
            resp.raise_for_status()
            body = resp.json()
        except ValueError as e:
            # a served-but-unparseable body is the server's bug, not an
            # outage; never mask it with stale cache
            raise MalformedResponse(f"{url!r} did not return JSON") from e
        except requests.HTTPError as e:
            if cached is not None:
                return cached["body"], True
            raise NetworkUnavailable(f"{url!r} answered {e.response.status_code}") from e
        except requests.RequestException as e:
            if cached is not None:
                return cached["body"], True
            raise NetworkUnavailable(f"cannot reach {url!r} and no cache exists") from e
        _parse_collections(body)  # validate before poisoning the cache
        self._write_cache(body)
        return body, False

    def _read_cache(self):
        try:
            with open(self._cache_path, "r", encoding="utf-8") as f:
                cached = json.load(f)
            if not isinstance(cached, dict) or "fetched_at" not in cached or "body" not in cached:
                return None
            return cached
        except (OSError, ValueError):
            return None

    def _write_cache(self, body) -> None:
        os.makedirs(self.config.cache_dir, exist_ok=True)
        tmp = self._cache_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump({"fetched_at": time.time(), "body": body}, f)
        os.replace(tmp, self._cache_path)

    # -- downloads ---------------------------------------------------------

    def download_dataset(
        self,
        ds: RemoteDataset,
        dest_dir: str | os.PathLike,
        progress=None,
        register_in: str | os.PathLike | None = None,
    ) -> str:
        """Fetch the dataset's h5ad asset into ``dest_dir``.

        The final name appears only after the byte count (and digest, if
        the listing supplied one) checks out; interrupted transfers leave
        a ``.part`` file that the next attempt resumes with a Range
        request. ``progress(bytes_done, bytes_total)`` may be called from
        the downloading thread. With ``register_in`` set, the finished
        file is recorded in that data directory's catalog as raw data.
        """
        if not ds.h5ad_asset_url:
            raise NoAssetAvailable(f"dataset {ds.dataset_id!r} has no h5ad asset")
        dest_dir = os.fspath(dest_dir)
        os.makedirs(dest_dir, exist_ok=True)
        final = os.path.join(dest_dir, f"{ds.dataset_id}.h5ad")
        part = os.path.join(dest_dir, f".{ds.dataset_id}.h5ad.part")

        with self._download_slots:
            self._fetch_to_part(ds, part, progress)
            if ds.sha256 is not None:
                digest = _sha256_file(part)
                if digest != ds.sha256:
                    os.unlink(part)
                    raise ChecksumMismatch(
                        f"{ds.dataset_id}: expected sha256 {ds.sha256}, got {digest}"
                    )
            os.replace(part, final)

        if register_in is not None:
            catalog_mod.register_raw(
                register_in,
                ds.dataset_id,
                final,
                title=ds.title,
                source=catalog_mod.SOURCE_CELLXGENE,
            )
        return final

    def _fetch_to_part(self, ds: RemoteDataset, part: str, progress) -> None:
        offset = os.path.getsize(part) if os.path.exists(part) else 0
        headers = {}
        if offset > 0:
            headers["Range"] = f"bytes={offset}-"
        try:
            resp = requests.get(
                ds.h5ad_asset_url,
                headers=headers,
                stream=True,
                timeout=self.config.timeout_seconds,
            )
            if resp.status_code == 416:
                # our partial file covers (at least) the whole asset;
                # fall through and let the size/digest checks judge it
                resp.close()
                return
            resp.raise_for_status()
            if resp.status_code == 206:
                mode = "ab"
                total = offset + _content_length(resp)
            else:
                mode = "wb"  # server ignored the range; start over
                offset = 0
                total = _content_length(resp)
            if total == 0 and ds.asset_size_bytes:
                total = ds.asset_size_bytes
            done = offset
            with open(part, mode) as f:
                for chunk in resp.iter_content(DOWNLOAD_CHUNK):
                    f.write(chunk)
                    done += len(chunk)
                    if progress is not None:
                        progress(done, total)
        except requests.RequestException as e:
            # covers refusals, timeouts, and connections dropped mid-body
            raise NetworkUnavailable(f"download of {ds.dataset_id!r} failed: {e}") from e


def _content_length(resp) -> int:
    try:
        return int(resp.headers.get("Content-Length", 0))
    except (TypeError, ValueError):
        return 0


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            block = f.read(1 << 20)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def _parse_collections(body) -> list[RemoteCollection]:
    """Validate and convert the collections JSON; raise on surprises."""
    if isinstance(body, dict) and "collections" in body:
        body = body["collections"]
    if not isinstance(body, list):
        raise MalformedResponse("collections listing is not a list")
    out = []
    for item in body:
        if not isinstance(item, dict):
            raise MalformedResponse("collection entry is not an object")
        cid = item.get("collection_id") or item.get("id")
        name = item.get("name") or item.get("title")
        if not cid or not isinstance(cid, str) or not isinstance(name, str):
            raise MalformedResponse("collection lacks id or name")
        datasets = []
        for d in item.get("datasets", []) or []:
            if not isinstance(d, dict):
                raise MalformedResponse("dataset entry is not an object")
            did = d.get("dataset_id") or d.get("id")
            if not did or not isinstance(did, str):
                raise MalformedResponse("dataset lacks an id")
            title = d.get("title") or d.get("name") or did
            url, size, sha = _pick_h5ad_asset(d)
            datasets.append(
                RemoteDataset(
                    dataset_id=did,
                    title=title,
                    h5ad_asset_url=url,
                    asset_size_bytes=size,
                    sha256=sha,
                )
            )
        out.append(RemoteCollection(collection_id=cid, name=name, datasets=tuple(datasets)))
    return out


def _pick_h5ad_asset(d: dict):
    for asset in d.get("assets", []) or []:
        if not isinstance(asset, dict):
            raise MalformedResponse("asset entry is not an object")
        if str(asset.get("filetype", "")).upper() != "H5AD":
            continue
        url = asset.get("url")
        if not url:
            continue
        size = asset.get("filesize")
        size = int(size) if isinstance(size, (int, float)) else None
        sha = asset.get("sha256") if isinstance(asset.get("sha256"), str) else None
        return url, size, sha
    return None, None, None
