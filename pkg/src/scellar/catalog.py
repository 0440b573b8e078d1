"""Local dataset catalog: which raw files and stores live in the data dir.

The manifest is one human-readable INI file (``catalog.ini``) in the data
directory. Every mutation rewrites it to a temporary file and renames it
into place, so readers never observe a half-written manifest. A dataset's
state is derived from which artifacts it has: ``raw_only`` (just the
downloaded h5ad), ``processed`` (just the store), or ``both``. Deleting
the raw file is only allowed once a store exists, mirroring a launcher
that frees disk space after preprocessing.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .errors import ScellarError

MANIFEST_NAME = "catalog.ini"

STATE_RAW_ONLY = "raw_only"
STATE_PROCESSED = "processed"
STATE_BOTH = "both"

SOURCE_CELLXGENE = "cellxgene"
SOURCE_LOCAL = "local"


class UnknownDataset(ScellarError, LookupError):
    """The catalog has no entry for this dataset id."""


class IllegalState(ScellarError):
    """The requested transition is not allowed from the entry's state."""


@dataclass
class CatalogEntry:
    dataset_id: str
    title: str
    source: str  # cellxgene | local
    raw_path: str | None = None
    store_path: str | None = None

    @property
    def state(self) -> str:
        if self.raw_path and self.store_path:
            return STATE_BOTH
        if self.store_path:
            return STATE_PROCESSED
        return STATE_RAW_ONLY


@dataclass
class Catalog:
    entries: dict[str, CatalogEntry]

    def get(self, dataset_id: str) -> CatalogEntry:
        if dataset_id not in self.entries:
            raise UnknownDataset(f"dataset {dataset_id!r} is not in the catalog")
        return self.entries[dataset_id]


def manifest_path(data_dir: str | os.PathLike) -> str:
    return os.path.join(os.fspath(data_dir), MANIFEST_NAME)


def raw_path_for(data_dir: str | os.PathLike, dataset_id: str) -> str:
    return os.path.join(os.fspath(data_dir), f"{dataset_id}.h5ad")


def store_path_for(data_dir: str | os.PathLike, dataset_id: str) -> str:
    return os.path.join(os.fspath(data_dir), f"{dataset_id}.store")


def load_catalog(data_dir: str | os.PathLike) -> Catalog:
    path = manifest_path(data_dir)
    entries: dict[str, CatalogEntry] = {}
    if os.path.exists(path):
        parser = configparser.ConfigParser(interpolation=None)
        parser.read(path, encoding="utf-8")
        for section in parser.sections():
            if not section.startswith("dataset:"):
                continue
            dataset_id = section[len("dataset:") :]
            sec = parser[section]
            entries[dataset_id] = CatalogEntry(
                dataset_id=dataset_id,
                title=sec.get("title", dataset_id),
                source=sec.get("source", SOURCE_LOCAL),
                raw_path=sec.get("raw_path") or None,
                store_path=sec.get("store_path") or None,
            )
    return Catalog(entries=entries)


def save_catalog(data_dir: str | os.PathLike, catalog: Catalog) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    for dataset_id in sorted(catalog.entries):
        entry = catalog.entries[dataset_id]
        section = f"dataset:{dataset_id}"
        parser.add_section(section)
        parser[section]["title"] = entry.title
        parser[section]["source"] = entry.source
        if entry.raw_path:
            parser[section]["raw_path"] = entry.raw_path
        if entry.store_path:
            parser[section]["store_path"] = entry.store_path
        parser[section]["state"] = entry.state  # informational; derived on load
    path = manifest_path(data_dir)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        parser.write(f)
    os.replace(tmp, path)


def register_raw(
    data_dir: str | os.PathLike,
    dataset_id: str,
    raw_path: str,
    title: str | None = None,
    source: str = SOURCE_LOCAL,
) -> Catalog:
    catalog = load_catalog(data_dir)
    existing = catalog.entries.get(dataset_id)
    if existing is not None:
        existing.raw_path = raw_path
        if title:
            existing.title = title
    else:
        catalog.entries[dataset_id] = CatalogEntry(
            dataset_id=dataset_id,
            title=title or dataset_id,
            source=source,
            raw_path=raw_path,
        )
    save_catalog(data_dir, catalog)
    return catalog


def mark_processed(
    data_dir: str | os.PathLike, dataset_id: str, store_path: str
) -> Catalog:
    catalog = load_catalog(data_dir)
    entry = catalog.get(dataset_id)
    entry.store_path = store_path
    save_catalog(data_dir, catalog)
    return catalog


def delete_raw(data_dir: str | os.PathLike, dataset_id: str) -> Catalog:
    """Remove the raw h5ad; only legal when a store exists to serve from."""
    catalog = load_catalog(data_dir)
    entry = catalog.get(dataset_id)
    if entry.state != STATE_BOTH:
        raise IllegalState(
            f"cannot delete raw data of {dataset_id!r} in state {entry.state!r}"
        )
    if entry.raw_path and os.path.exists(entry.raw_path):
        os.unlink(entry.raw_path)
    entry.raw_path = None
    save_catalog(data_dir, catalog)
    return catalog


def delete_store(data_dir: str | os.PathLike, dataset_id: str) -> Catalog:
    """Remove the store; the entry survives only if raw data remains."""
    catalog = load_catalog(data_dir)
    entry = catalog.get(dataset_id)
    if not entry.store_path:
        raise IllegalState(f"dataset {dataset_id!r} has no store to delete")
    if os.path.exists(entry.store_path):
        os.unlink(entry.store_path)
    entry.store_path = None
    if entry.raw_path is None:
        del catalog.entries[dataset_id]
    save_catalog(data_dir, catalog)
    return catalog
