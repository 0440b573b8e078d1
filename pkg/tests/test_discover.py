"""Remote catalog client: listings, caching, and resumable downloads."""

from __future__ import annotations

import hashlib
import json
import os
import threading

import pytest

from helpers import MockDiscover, simple_listing
from scellar.catalog import STATE_RAW_ONLY, SOURCE_CELLXGENE, load_catalog
from scellar.discover import (
    ChecksumMismatch,
    DiscoverClient,
    DiscoverConfig,
    MalformedResponse,
    NetworkUnavailable,
    NoAssetAvailable,
)


@pytest.fixture()
def mock():
    server = MockDiscover()
    yield server
    server.stop()


def make_client(mock, tmp_path, **overrides):
    cfg = DiscoverConfig(
        base_url=mock.base_url,
        cache_dir=str(tmp_path / "cache"),
        timeout_seconds=5.0,
        **overrides,
    )
    return DiscoverClient(cfg)


def listing_requests(mock):
    return [r for r in mock.requests if r[0].startswith("/curation")]


def test_listing_shape(mock, tmp_path):
    data = simple_listing(mock)
    client = make_client(mock, tmp_path)
    result = client.list_collections()
    assert not result.stale
    assert [c.name for c in result.collections] == [
        "Lung cell atlas",
        "Heart map",
        "Brain survey",
    ]
    ds1 = result.collections[0].datasets[0]
    assert ds1.dataset_id == "ds1"
    assert ds1.h5ad_asset_url == mock.asset_url("ds1.h5ad")
    assert ds1.asset_size_bytes == len(data)
    assert result.collections[2].datasets == ()


def test_name_filter_is_case_insensitive_substring(mock, tmp_path):
    simple_listing(mock)
    client = make_client(mock, tmp_path)
    assert [c.name for c in client.list_collections("lung").collections] == ["Lung cell atlas"]
    assert [c.name for c in client.list_collections("MAP").collections] == ["Heart map"]
    assert len(client.list_collections("").collections) == 3
    assert client.list_collections("zzz").collections == []


def test_fresh_cache_served_without_network(mock, tmp_path):
    simple_listing(mock)
    client = make_client(mock, tmp_path)
    client.list_collections()
    assert len(listing_requests(mock)) == 1
    again = client.list_collections()
    assert len(listing_requests(mock)) == 1  # second call never hit the server
    assert not again.stale
    assert len(again.collections) == 3


def test_expired_cache_refetches(mock, tmp_path):
    simple_listing(mock)
    client = make_client(mock, tmp_path, cache_ttl_seconds=0.0)
    client.list_collections()
    client.list_collections()
    assert len(listing_requests(mock)) == 2


def test_network_failure_falls_back_to_stale_cache(mock, tmp_path):
    simple_listing(mock)
    client = make_client(mock, tmp_path, cache_ttl_seconds=0.0)
    client.list_collections()
    mock.stop()
    result = client.list_collections("lung")
    assert result.stale
    assert [c.name for c in result.collections] == ["Lung cell atlas"]


def test_network_failure_without_cache(mock, tmp_path):
    simple_listing(mock)
    client = make_client(mock, tmp_path)
    mock.stop()
    with pytest.raises(NetworkUnavailable):
        client.list_collections()


def test_malformed_body_never_uses_cache(mock, tmp_path):
    simple_listing(mock)
    client = make_client(mock, tmp_path, cache_ttl_seconds=0.0)
    client.list_collections()  # warm the cache
    mock.malformed_body = b"<html>certainly not json"
    with pytest.raises(MalformedResponse):
        client.list_collections()


@pytest.mark.parametrize(
    "body",
    [
        {"collections": "nope"},
        [42],
        [{"name": "missing id"}],
        [{"collection_id": "c", "name": "x", "datasets": [{"title": "no id"}]}],
    ],
)
def test_malformed_structure_rejected(mock, tmp_path, body):
    mock.malformed_body = json.dumps(body).encode()
    client = make_client(mock, tmp_path)
    with pytest.raises(MalformedResponse):
        client.list_collections()
    # a rejected body must not poison the cache
    assert not os.path.exists(client._cache_path)


def test_download_round_trip(mock, tmp_path):
    data = simple_listing(mock)
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    seen = []
    dest = client.download_dataset(ds, tmp_path / "dl", progress=lambda d, t: seen.append((d, t)))
    assert os.path.basename(dest) == "ds1.h5ad"
    with open(dest, "rb") as f:
        assert f.read() == data
    assert seen[-1] == (len(data), len(data))
    assert [d for d, _ in seen] == sorted(d for d, _ in seen)
    leftovers = [p for p in (tmp_path / "dl").iterdir() if p.name.endswith(".part")]
    assert leftovers == []


def test_interrupted_download_keeps_part_not_final(mock, tmp_path):
    simple_listing(mock)
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    mock.fail_after["ds1.h5ad"] = 200_000
    with pytest.raises(NetworkUnavailable):
        client.download_dataset(ds, tmp_path / "dl")
    dl = tmp_path / "dl"
    assert not (dl / "ds1.h5ad").exists()
    part = dl / ".ds1.h5ad.part"
    assert part.exists()
    assert 0 < part.stat().st_size < 1 << 20


def test_resume_uses_range_and_completes(mock, tmp_path):
    data = simple_listing(mock)
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    mock.fail_after["ds1.h5ad"] = 200_000
    with pytest.raises(NetworkUnavailable):
        client.download_dataset(ds, tmp_path / "dl")
    offset = (tmp_path / "dl" / ".ds1.h5ad.part").stat().st_size

    dest = client.download_dataset(ds, tmp_path / "dl")
    with open(dest, "rb") as f:
        assert f.read() == data
    asset_reqs = [r for r in mock.requests if r[0].startswith("/assets/")]
    assert asset_reqs[-1][1] == f"bytes={offset}-"


def test_server_ignoring_range_restarts_cleanly(mock, tmp_path):
    data = simple_listing(mock)
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    dl = tmp_path / "dl"
    dl.mkdir()
    # a stale part with wrong content must be discarded when the server
    # answers 200 instead of 206
    (dl / ".ds1.h5ad.part").write_bytes(b"\xff" * 1000)
    mock.ignore_range = True
    dest = client.download_dataset(ds, dl)
    with open(dest, "rb") as f:
        assert f.read() == data


def test_complete_part_finalized_via_416(mock, tmp_path):
    data = simple_listing(mock, sha=hashlib.sha256(bytes(range(256)) * 4096).hexdigest())
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    dl = tmp_path / "dl"
    dl.mkdir()
    (dl / ".ds1.h5ad.part").write_bytes(data)
    dest = client.download_dataset(ds, dl)
    with open(dest, "rb") as f:
        assert f.read() == data
    asset_reqs = [r for r in mock.requests if r[0].startswith("/assets/")]
    assert asset_reqs[-1][1] == f"bytes={len(data)}-"


def test_checksum_mismatch_deletes_part(mock, tmp_path):
    simple_listing(mock, sha="0" * 64)
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    with pytest.raises(ChecksumMismatch):
        client.download_dataset(ds, tmp_path / "dl")
    dl = tmp_path / "dl"
    assert not (dl / "ds1.h5ad").exists()
    assert not (dl / ".ds1.h5ad.part").exists()


def test_matching_checksum_accepted(mock, tmp_path):
    data = simple_listing(mock, sha=hashlib.sha256(bytes(range(256)) * 4096).hexdigest())
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    dest = client.download_dataset(ds, tmp_path / "dl")
    assert os.path.getsize(dest) == len(data)


def test_dataset_without_asset(mock, tmp_path):
    simple_listing(mock, with_asset=False)
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    with pytest.raises(NoAssetAvailable):
        client.download_dataset(ds, tmp_path / "dl")


def test_download_registers_in_catalog(mock, tmp_path):
    simple_listing(mock)
    client = make_client(mock, tmp_path)
    ds = client.list_collections().collections[0].datasets[0]
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    dest = client.download_dataset(ds, data_dir, register_in=data_dir)
    entry = load_catalog(data_dir).get("ds1")
    assert entry.state == STATE_RAW_ONLY
    assert entry.source == SOURCE_CELLXGENE
    assert entry.title == "lung sample"
    assert entry.raw_path == dest


def test_parallel_downloads_complete(mock, tmp_path):
    data = simple_listing(mock)
    mock.add_asset("ds2.h5ad", data[::-1])
    client = make_client(mock, tmp_path)
    ds1 = client.list_collections().collections[0].datasets[0]
    from scellar.discover import RemoteDataset

    ds2 = RemoteDataset("ds2", "t2", mock.asset_url("ds2.h5ad"), len(data))
    errors = []

    def run(ds):
        try:
            client.download_dataset(ds, tmp_path / "dl")
        except Exception as e:  # noqa: BLE001 - surfaced via the errors list
            errors.append(e)

    threads = [threading.Thread(target=run, args=(d,)) for d in (ds1, ds2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    with open(tmp_path / "dl" / "ds2.h5ad", "rb") as f:
        assert f.read() == data[::-1]
