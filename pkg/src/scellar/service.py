"""HTTP API over the full pipeline, plus the embedded job runner.

Metadata travels as JSON; per-cell arrays (embeddings, expression) as
the little-endian blocks from the blocks module. Stores open lazily on
first request and stay cached; ingest and precompute run as background
jobs, at most one per dataset at a time. Every error response carries
exactly one machine-readable code: not_found, bad_request, conflict,
upstream_unavailable, or internal.

The server owns each session's selection: geometry comes in, the
resolved cell-index set goes out, and differential expression always
runs against the server's copy. Viewer and backend therefore can never
disagree about what is selected.
"""

from __future__ import annotations

import os
import socket
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np

from . import blocks, catalog, presentation, spatial, stats
from .anndata_io import FileNotReadable, open_and_parse
from .discover import (
    DiscoverClient,
    DiscoverConfig,
    MalformedResponse,
    NetworkUnavailable,
)
from .errors import IndexOutOfRange, NonFiniteCoordinate, ScellarError
from .store import Store, build_store
from .version import __version__

JOB_QUEUED = "queued"
JOB_RUNNING = "running"
JOB_DONE = "done"
JOB_FAILED = "failed"


class PortInUse(ScellarError):
    """Another process already listens on the requested port."""


class DataDirUnwritable(ScellarError):
    """The data directory does not exist or cannot be written."""


class ApiProblem(ScellarError):
    """An error with an explicit wire code, raised by handlers directly."""

    def __init__(self, code: str, message: str, detail=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.detail = detail


_STATUS_FOR_CODE = {
    "not_found": 404,
    "bad_request": 400,
    "conflict": 409,
    "upstream_unavailable": 502,
    "internal": 500,
}


def _problem_for(exc: Exception) -> ApiProblem:
    if isinstance(exc, ApiProblem):
        return exc
    message = str(exc) or type(exc).__name__
    detail = {"type": type(exc).__name__}
    if isinstance(
        exc,
        (
            catalog.UnknownDataset,
            stats.MarkersNotComputed,
            stats.UnknownAnnotation,
            FileNotReadable,
            IndexOutOfRange,
        ),
    ):
        return ApiProblem("not_found", message, detail)
    if isinstance(
        exc,
        (
            stats.SelectionTooSmall,
            stats.GroupTooSmall,
            spatial.NonPositiveRadius,
            spatial.DegeneratePolygon,
            spatial.EmptyPointSet,
            NonFiniteCoordinate,
            presentation.NegativeExpression,
            ValueError,
        ),
    ):
        return ApiProblem("bad_request", message, detail)
    if isinstance(exc, catalog.IllegalState):
        return ApiProblem("conflict", message, detail)
    if isinstance(exc, (NetworkUnavailable, MalformedResponse)):
        return ApiProblem("upstream_unavailable", message, detail)
    return ApiProblem("internal", message, detail)


@dataclass
class Job:
    job_id: str
    kind: str
    dataset_id: str
    state: str = JOB_QUEUED
    error: str | None = None
    progress: float | None = None

    def as_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "kind": self.kind,
            "dataset_id": self.dataset_id,
            "state": self.state,
            "error": self.error,
            "progress": self.progress,
        }


@dataclass
class SessionState:
    session_id: str
    dataset_id: str
    selection: stats.SelectionMask
    view: presentation.ViewState


@dataclass
class AppState:
    data_dir: str
    discover: DiscoverClient
    stores: dict[str, Store] = field(default_factory=dict)
    indexes: dict[tuple[str, str], spatial.PointIndex] = field(default_factory=dict)
    sessions: dict[str, SessionState] = field(default_factory=dict)
    jobs: dict[str, Job] = field(default_factory=dict)
    busy: set = field(default_factory=set)
    lock: threading.Lock = field(default_factory=threading.Lock)

    # -- lazy store / index access ----------------------------------------

    def store_for(self, dataset_id: str) -> Store:
        with self.lock:
            cached = self.stores.get(dataset_id)
        if cached is not None:
            return cached
        entry = catalog.load_catalog(self.data_dir).get(dataset_id)
        if not entry.store_path:
            raise ApiProblem(
                "not_found",
                f"dataset {dataset_id!r} has no store yet; run ingest first",
                {"reason": "not_processed"},
            )
        store = Store(entry.store_path)
        with self.lock:
            self.stores[dataset_id] = store
        return store

    def index_for(self, dataset_id: str, embedding: str | None) -> spatial.PointIndex:
        store = self.store_for(dataset_id)
        name = embedding or "default"
        key = (dataset_id, name)
        with self.lock:
            cached = self.indexes.get(key)
        if cached is not None:
            return cached
        got = (
            store.default_embedding_3d()
            if name == "default"
            else store.embedding_3d(name)
        )
        if got is None:
            raise ApiProblem("not_found", f"no embedding {name!r} in {dataset_id!r}")
        coords, _, _ = got
        index = spatial.build_index(coords)
        with self.lock:
            self.indexes[key] = index
        return index

    def invalidate(self, dataset_id: str) -> None:
        with self.lock:
            self.stores.pop(dataset_id, None)
            for key in [k for k in self.indexes if k[0] == dataset_id]:
                self.indexes.pop(key, None)

    # -- jobs --------------------------------------------------------------

    def start_job(self, kind: str, dataset_id: str, work, exclusive: bool) -> Job:
        job = Job(job_id=uuid.uuid4().hex, kind=kind, dataset_id=dataset_id)
        with self.lock:
            if exclusive:
                if dataset_id in self.busy:
                    raise ApiProblem(
                        "conflict",
                        f"dataset {dataset_id!r} already has a {kind}-class job running",
                    )
                self.busy.add(dataset_id)
            self.jobs[job.job_id] = job

        def run():
            job.state = JOB_RUNNING
            try:
                work(job)
                job.state = JOB_DONE
            except Exception as e:  # job errors surface via /jobs, not logs
                job.state = JOB_FAILED
                job.error = f"{type(e).__name__}: {e}"
            finally:
                if exclusive:
                    with self.lock:
                        self.busy.discard(dataset_id)

        threading.Thread(target=run, daemon=True).start()
        return job


def _resolve_selection(
    state: AppState, session: SessionState, spec: dict
) -> stats.SelectionMask:
    """Apply one selection spec to the session and return the new mask."""
    store = state.store_for(session.dataset_id)
    mode = spec.get("mode", "add")
    if mode not in ("add", "replace", "reset"):
        raise ApiProblem("bad_request", f"unknown selection mode {mode!r}")
    if mode == "reset":
        return spatial.combine_selection(session.selection, (), "reset")

    tool = spec.get("tool")
    if tool == "sphere":
        center = spec.get("center")
        radius = spec.get("radius")
        if center is None or radius is None:
            raise ApiProblem("bad_request", "sphere selection needs center and radius")
        index = state.index_for(session.dataset_id, spec.get("embedding"))
        addition = spatial.sphere_select(
            index, np.asarray(center, dtype=np.float64), float(radius)
        )
    elif tool == "lasso":
        polygon = spec.get("polygon")
        transform = spec.get("view_transform")
        if polygon is None or transform is None:
            raise ApiProblem(
                "bad_request", "lasso selection needs polygon and view_transform"
            )
        matrix = np.asarray(transform, dtype=np.float64).reshape(4, 4)
        lasso = spatial.LassoPolygon(
            vertices=np.asarray(polygon, dtype=np.float64), view_transform=matrix
        )
        index = state.index_for(session.dataset_id, spec.get("embedding"))
        addition = spatial.lasso_select(index.points, lasso)
    elif tool == "indices":
        idx = spec.get("indices")
        if idx is None:
            raise ApiProblem("bad_request", "index selection needs an indices list")
        addition = np.asarray(idx, dtype=np.int64)
        if len(addition) and (
            addition.min() < 0 or addition.max() >= store.n_cells
        ):
            raise ApiProblem("bad_request", "cell indices out of range")
    else:
        raise ApiProblem("bad_request", f"unknown selection tool {tool!r}")
    return spatial.combine_selection(session.selection, addition, mode)


def _marker_table_json(table: stats.MarkerTable) -> dict:
    return {
        "group_label": table.group_label,
        "annotation": table.annotation,
        "n_selected": table.n_selected,
        "n_rest": table.n_rest,
        "skipped_reason": table.skipped_reason,
        "records": [
            {
                "gene_index": r.gene_index,
                "gene_name": r.gene_name,
                "t": _json_float(r.t),
                "df": _json_float(r.df),
                "p_value": _json_float(r.p_value),
                "log_fold_change": _json_float(r.log_fold_change),
                "mean_selected": _json_float(r.mean_selected),
                "mean_rest": _json_float(r.mean_rest),
            }
            for r in table.records
        ],
        "tsv": stats.to_tsv(table),
    }


def _json_float(v: float):
    # JSON has no Infinity; the +/-inf t sentinel crosses as a string
    if v != v:
        return None
    if v == float("inf"):
        return "inf"
    if v == float("-inf"):
        return "-inf"
    return v


def create_app(
    data_dir: str,
    discover_config: DiscoverConfig | None = None,
    static_dir: str | None = None,
):
    from fastapi import Body, FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse, Response

    data_dir = os.fspath(data_dir)
    if discover_config is None:
        discover_config = DiscoverConfig(cache_dir=os.path.join(data_dir, "cache"))
    state = AppState(data_dir=data_dir, discover=DiscoverClient(discover_config))

    app = FastAPI(title="scellar", version=__version__, docs_url=None, redoc_url=None)
    app.state.scellar = state

    def problem_response(problem: ApiProblem) -> JSONResponse:
        return JSONResponse(
            status_code=_STATUS_FOR_CODE[problem.code],
            content={
                "error": {
                    "code": problem.code,
                    "message": problem.message,
                    "detail": problem.detail,
                }
            },
        )

    @app.exception_handler(ScellarError)
    async def scellar_error_handler(request: Request, exc: ScellarError):
        return problem_response(_problem_for(exc))

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError):
        return problem_response(_problem_for(exc))

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return problem_response(
            ApiProblem("bad_request", "request body failed validation", exc.errors())
        )

    def get_session(sid: str) -> SessionState:
        session = state.sessions.get(sid)
        if session is None:
            raise ApiProblem("not_found", f"unknown session {sid!r}")
        return session

    # -- health and remote catalog ----------------------------------------

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/catalog/remote")
    def catalog_remote(filter: str = ""):
        listing = state.discover.list_collections(filter)
        return {
            "stale": listing.stale,
            "collections": [
                {
                    "collection_id": c.collection_id,
                    "name": c.name,
                    "datasets": [
                        {
                            "dataset_id": d.dataset_id,
                            "title": d.title,
                            "downloadable": d.h5ad_asset_url is not None,
                            "asset_size_bytes": d.asset_size_bytes,
                        }
                        for d in c.datasets
                    ],
                }
                for c in listing.collections
            ],
        }

    @app.post("/catalog/download/{dataset_id}")
    def catalog_download(dataset_id: str):
        listing = state.discover.list_collections("")
        remote = None
        for coll in listing.collections:
            for d in coll.datasets:
                if d.dataset_id == dataset_id:
                    remote = d
        if remote is None:
            raise ApiProblem("not_found", f"no remote dataset {dataset_id!r}")

        def work(job: Job):
            def progress(done, total):
                job.progress = done / total if total else None

            state.discover.download_dataset(
                remote, state.data_dir, progress=progress, register_in=state.data_dir
            )

        job = state.start_job("download", dataset_id, work, exclusive=False)
        return {"job_id": job.job_id}

    # -- local catalog and processing -------------------------------------

    @app.get("/catalog/local")
    def catalog_local():
        cat = catalog.load_catalog(state.data_dir)
        return {
            "datasets": [
                {
                    "dataset_id": e.dataset_id,
                    "title": e.title,
                    "source": e.source,
                    "state": e.state,
                }
                for e in cat.entries.values()
            ]
        }

    @app.post("/datasets/{dataset_id}/ingest")
    def ingest(dataset_id: str):
        entry = catalog.load_catalog(state.data_dir).get(dataset_id)
        if not entry.raw_path:
            raise ApiProblem(
                "conflict", f"dataset {dataset_id!r} has no raw file to ingest"
            )
        raw_path = entry.raw_path

        def work(job: Job):
            raw = open_and_parse(raw_path)
            dest = catalog.store_path_for(state.data_dir, dataset_id)
            build_store(raw, dest)
            catalog.mark_processed(state.data_dir, dataset_id, dest)
            state.invalidate(dataset_id)

        job = state.start_job("ingest", dataset_id, work, exclusive=True)
        return {"job_id": job.job_id}

    @app.post("/datasets/{dataset_id}/precompute")
    def precompute(dataset_id: str):
        entry = catalog.load_catalog(state.data_dir).get(dataset_id)
        if not entry.store_path:
            raise ApiProblem(
                "conflict", f"dataset {dataset_id!r} has no store; ingest first"
            )
        store_path = entry.store_path

        def work(job: Job):
            stats.precompute_markers(store_path)
            state.invalidate(dataset_id)

        job = state.start_job("precompute", dataset_id, work, exclusive=True)
        return {"job_id": job.job_id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise ApiProblem("not_found", f"unknown job {job_id!r}")
        return job.as_dict()

    # -- dataset serving ---------------------------------------------------

    @app.get("/datasets/{dataset_id}/meta")
    def meta(dataset_id: str):
        store = state.store_for(dataset_id)
        default3d = store.default_embedding_3d()
        annotations = []
        for col in store.annotations:
            colors = presentation.palette_hex(
                presentation.categorical_palette(len(col.categories))
            )
            counts = np.bincount(
                col.codes[col.codes >= 0], minlength=len(col.categories)
            )
            centroids: list = [None] * len(col.categories)
            if default3d is not None:
                cat_pos = {
                    label: pos
                    for label, pos, _ in spatial.category_centroids(default3d[0], col)
                }
                for k, label in enumerate(col.categories):
                    if label in cat_pos:
                        centroids[k] = [float(x) for x in cat_pos[label]]
            annotations.append(
                {
                    "name": col.name,
                    "categories": list(col.categories),
                    "counts": [int(c) for c in counts],
                    "colors": colors,
                    "centroids": centroids,
                }
            )
        return {
            "dataset_id": dataset_id,
            "n_cells": store.n_cells,
            "n_genes": store.n_genes,
            "has_markers": store.markers_blob is not None,
            "annotations": annotations,
            "embeddings": [
                {"name": e.name, "dims": e.dims} for e in store.embeddings
            ],
            "default_embedding": (
                store.embeddings[store.default_embedding].name
                if store.default_embedding >= 0
                else None
            ),
        }

    @app.get("/datasets/{dataset_id}/embedding/{name}")
    def embedding(dataset_id: str, name: str):
        store = state.store_for(dataset_id)
        got = (
            store.default_embedding_3d()
            if name == "default"
            else store.embedding_3d(name)
        )
        if got is None:
            raise ApiProblem("not_found", f"no embedding {name!r} in {dataset_id!r}")
        coords, actual_name, _ = got
        return Response(
            content=blocks.encode_embedding_block(coords, actual_name),
            media_type="application/octet-stream",
        )

    @app.get("/datasets/{dataset_id}/annotation/{name}")
    def annotation_codes(dataset_id: str, name: str):
        store = state.store_for(dataset_id)
        for col in store.annotations:
            if col.name == name:
                return Response(
                    content=blocks.encode_annotation_block(
                        col.codes, len(col.categories), col.name
                    ),
                    media_type="application/octet-stream",
                )
        raise ApiProblem("not_found", f"no annotation {name!r} in {dataset_id!r}")

    @app.get("/datasets/{dataset_id}/genes")
    def genes(dataset_id: str, q: str = ""):
        store = state.store_for(dataset_id)
        return {
            "matches": [
                {"gene_index": gi, "name": name} for gi, name in store.lookup_gene(q)
            ]
        }

    def _resolve_gene(store: Store, gene: str) -> int:
        if gene.isdigit():
            gi = int(gene)
            if gi >= store.n_genes:
                raise ApiProblem("not_found", f"gene index {gi} out of range")
            return gi
        matches = store.lookup_gene(gene)
        for gi, name in matches:
            if name.casefold() == gene.casefold():
                return gi
        raise ApiProblem("not_found", f"no gene named {gene!r}")

    @app.get("/datasets/{dataset_id}/expression/{gene}")
    def expression(dataset_id: str, gene: str):
        store = state.store_for(dataset_id)
        gi = _resolve_gene(store, gene)
        column = store.get_column(gi)
        block, info = presentation.column_expression_block(
            column, store.n_cells, store.gene_names[gi]
        )
        return Response(
            content=blocks.encode_expression_block(block, info),
            media_type="application/octet-stream",
        )

    @app.get("/datasets/{dataset_id}/markers/{annotation}/{category}")
    def markers(dataset_id: str, annotation: str, category: str):
        store = state.store_for(dataset_id)
        table = stats.load_markers(store, annotation, category)
        return _marker_table_json(table)

    # -- sessions ----------------------------------------------------------

    @app.post("/sessions")
    def create_session(body: dict = Body(...)):
        dataset_id = body.get("dataset_id")
        if not dataset_id:
            raise ApiProblem("bad_request", "session needs a dataset_id")
        store = state.store_for(dataset_id)
        session = SessionState(
            session_id=uuid.uuid4().hex,
            dataset_id=dataset_id,
            selection=stats.SelectionMask.empty(store.n_cells),
            view=presentation.ViewState(),
        )
        state.sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "dataset_id": dataset_id,
            "n_cells": store.n_cells,
        }

    @app.post("/sessions/{sid}/selection")
    def update_selection(sid: str, body: dict = Body(...)):
        session = get_session(sid)
        session.selection = _resolve_selection(state, session, body)
        return {
            "selected_count": session.selection.count,
            "indices": [int(i) for i in session.selection.indices()],
        }

    @app.post("/sessions/{sid}/de")
    def run_de(sid: str, body: dict = Body(default={})):
        session = get_session(sid)
        spec = body.get("selection")
        if spec is not None:
            session.selection = _resolve_selection(state, session, spec)
        store = state.store_for(session.dataset_id)
        table = stats.differential_expression(store, session.selection)
        out = _marker_table_json(table)
        out["selected_count"] = session.selection.count
        return out

    @app.post("/sessions/{sid}/view")
    def update_view(sid: str, body: dict = Body(...)):
        session = get_session(sid)
        store = state.store_for(session.dataset_id)
        action = body.get("action")
        if not action:
            raise ApiProblem("bad_request", "view update needs an action")
        genes = body.get("genes")
        if genes is not None:
            genes = [int(g) for g in genes]
            for g in genes:
                if g < 0 or g >= store.n_genes:
                    raise ApiProblem("bad_request", f"gene index {g} out of range")
        session.view = presentation.step_view(
            session.view,
            action,
            genes=genes,
            n_annotations=max(1, len(store.annotations)),
        )
        current = session.view.current_gene()
        return {
            "mode": session.view.mode,
            "active_annotation": session.view.active_annotation,
            "gene_set": list(session.view.gene_set),
            "gene_cursor": session.view.gene_cursor,
            "current_gene": current,
            "current_gene_name": (
                store.gene_names[current] if current is not None else None
            ),
        }

    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="viewer")

    return app


def serve(
    host: str = "127.0.0.1",
    port: int = 8077,
    data_dir: str = ".",
    discover_config: DiscoverConfig | None = None,
    static_dir: str | None = None,
) -> None:
    """Run the API server; blocks until interrupted."""
    import uvicorn

    if not os.path.isdir(data_dir) or not os.access(data_dir, os.W_OK):
        raise DataDirUnwritable(f"data directory {data_dir!r} missing or read-only")
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError as e:
        raise PortInUse(f"cannot bind {host}:{port}: {e}") from e
    finally:
        probe.close()
    app = create_app(data_dir, discover_config=discover_config, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
