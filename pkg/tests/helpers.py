"""Shared test machinery: h5ad fixture writers, independent oracles, and
a local mock of the remote dataset catalog with fault injection.

Oracles here deliberately avoid the package's own code paths: dense
matrices are reconstructed with plain slicing, statistics come from
scipy, and rankings use Python's sorted() rather than lexsort.
"""

from __future__ import annotations

import json
import math
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

# -- h5ad fixture writing --------------------------------------------------


def write_h5ad_fixture(
    path,
    dense,
    *,
    layout="csr",
    gene_names=None,
    obs_categorical=None,
    obs_legacy=None,
    obs_strings=None,
    obs_bool=None,
    obsm=None,
    var_style="group",
    x_attr_style="modern",
    unsorted_indices=False,
):
    """Write an h5ad file covering one encoding variant per knob.

    dense: (n_cells, n_genes) float array defining X.
    layout: csr | csc | dense.
    obs_categorical: {name: (categories, codes)} modern group encoding.
    obs_legacy: {name: (categories, codes)} legacy int dataset + reference attr.
    obs_strings: {name: list[str]} plain string column.
    obs_bool: {name: bool array}.
    obsm: {name: 2-D float array}.
    var_style: group | compound | missing.
    x_attr_style: modern (encoding-type) | h5sparse | bare.
    """
    import h5py

    dense = np.asarray(dense, dtype=np.float64)
    n, m = dense.shape
    str_t = h5py.string_dtype(encoding="utf-8")
    gene_names = gene_names or [f"g{i}" for i in range(m)]

    with h5py.File(path, "w") as f:
        if layout == "dense":
            x = f.create_dataset("X", data=dense)
            if x_attr_style == "modern":
                x.attrs["encoding-type"] = "array"
        else:
            if layout == "csr":
                rows, cols = np.nonzero(dense)
                major, minor, axis_len = rows, cols, n
            else:
                cols_t, rows_t = np.nonzero(dense.T)
                major, minor, axis_len = cols_t, rows_t, m
            counts = np.bincount(major, minlength=axis_len)
            indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            if layout == "csr":
                values = dense[major, minor]
            else:
                values = dense.T[major, minor]
            indices = minor.astype(np.int64)
            if unsorted_indices:
                # reverse within each row; parser must canonicalize
                indices = indices.copy()
                values = values.copy()
                for i in range(axis_len):
                    lo, hi = indptr[i], indptr[i + 1]
                    indices[lo:hi] = indices[lo:hi][::-1]
                    values[lo:hi] = values[lo:hi][::-1]
            g = f.create_group("X")
            if x_attr_style == "modern":
                g.attrs["encoding-type"] = f"{layout}_matrix"
                g.attrs["shape"] = np.array([n, m], dtype=np.int64)
            elif x_attr_style == "h5sparse":
                g.attrs["h5sparse_format"] = layout
                g.attrs["h5sparse_shape"] = np.array([n, m], dtype=np.int64)
            g.create_dataset("data", data=values.astype(np.float64))
            g.create_dataset("indices", data=indices)
            g.create_dataset("indptr", data=indptr)

        obs = f.create_group("obs")
        obs.attrs["encoding-type"] = "dataframe"
        obs.attrs["_index"] = "_index"
        obs.create_dataset(
            "_index", data=np.array([f"cell{i}" for i in range(n)], dtype=str_t)
        )
        order = []
        for name, (categories, codes) in (obs_categorical or {}).items():
            cg = obs.create_group(name)
            cg.attrs["encoding-type"] = "categorical"
            cg.create_dataset("codes", data=np.asarray(codes, dtype=np.int64))
            cg.create_dataset("categories", data=np.array(categories, dtype=str_t))
            order.append(name)
        if obs_legacy:
            cats_root = f.require_group("obs/__categories")
            for name, (categories, codes) in obs_legacy.items():
                cat_ds = cats_root.create_dataset(
                    name, data=np.array(categories, dtype=str_t)
                )
                col = obs.create_dataset(name, data=np.asarray(codes, dtype=np.int64))
                col.attrs["categories"] = cat_ds.ref
                order.append(name)
        for name, strings in (obs_strings or {}).items():
            obs.create_dataset(name, data=np.array(strings, dtype=str_t))
            order.append(name)
        for name, flags in (obs_bool or {}).items():
            obs.create_dataset(name, data=np.asarray(flags, dtype=bool))
            order.append(name)
        obs.attrs["column-order"] = np.array(order, dtype=str_t)

        if var_style == "group":
            var = f.create_group("var")
            var.attrs["encoding-type"] = "dataframe"
            var.attrs["_index"] = "_index"
            var.create_dataset("_index", data=np.array(gene_names, dtype=str_t))
        elif var_style == "compound":
            dt = np.dtype([("_index", "S32"), ("score", "<f8")])
            arr = np.zeros(m, dtype=dt)
            arr["_index"] = [s.encode() for s in gene_names]
            arr["score"] = np.arange(m)
            f.create_dataset("var", data=arr)
        elif var_style == "missing":
            f.create_group("var")

        if obsm:
            grp = f.create_group("obsm")
            for name, coords in obsm.items():
                grp.create_dataset(name, data=np.asarray(coords))


# -- independent statistics oracles ---------------------------------------


def scipy_welch(a_vals, b_vals):
    """(t, df, p) from scipy for two samples."""
    from scipy import stats as sps

    r = sps.ttest_ind(np.asarray(a_vals), np.asarray(b_vals), equal_var=False)
    return float(r.statistic), float(r.df), float(r.pvalue)


def scipy_p(t, df):
    from scipy import special

    return float(2.0 * special.stdtr(df, -abs(t)))


def oracle_group_stats(dense_column, mask_bool):
    sel = dense_column[mask_bool]
    rest = dense_column[~mask_bool]
    out = []
    for vals in (sel, rest):
        n = len(vals)
        mean = float(np.mean(vals)) if n else math.nan
        var = float(np.var(vals, ddof=1)) if n >= 2 else math.nan
        out.append((n, mean, var))
    return out[0], out[1]


def oracle_de(dense, mask_bool, top_k=10):
    """Brute-force dense DE: scipy per gene, Python sorted() for ranking.

    Returns a list of dicts ordered like the implementation's MarkerTable.
    Degenerate genes (zero standard error) follow the contract: t=0, p=1
    on equal means, signed infinity and p=0 otherwise.
    """
    n, m = dense.shape
    sel = dense[mask_bool]
    rest = dense[~mask_bool]
    na, nb = len(sel), len(rest)
    rows = []
    for g in range(m):
        a, b = sel[:, g], rest[:, g]
        ma, mb = float(np.mean(a)), float(np.mean(b))
        va, vb = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
        se2 = va / na + vb / nb
        if se2 == 0.0:
            df = float(na + nb - 2)
            if ma == mb:
                t, p = 0.0, 1.0
            else:
                t, p = math.copysign(math.inf, ma - mb), 0.0
        else:
            t, df, p = scipy_welch(a, b)
        lfc = math.log2((ma + 1e-9) / (mb + 1e-9))
        rows.append(
            {
                "gene_index": g,
                "t": t,
                "df": df,
                "p_value": p,
                "log_fold_change": lfc,
                "mean_selected": ma,
                "mean_rest": mb,
            }
        )
    rows.sort(key=lambda r: (r["p_value"], -abs(r["log_fold_change"]), r["gene_index"]))
    return rows[:top_k]


def dense_from_raw(raw):
    """Dense oracle matrix rebuilt from raw sparse arrays by plain slicing."""
    from scellar.anndata_io import DenseMatrix, SparseMatrixCSC, SparseMatrixCSR

    mx = raw.matrix
    if isinstance(mx, DenseMatrix):
        return np.array(mx.data, dtype=np.float64)
    out = np.zeros((mx.n_rows, mx.n_cols), dtype=np.float64)
    if isinstance(mx, SparseMatrixCSR):
        for i in range(mx.n_rows):
            lo, hi = mx.indptr[i], mx.indptr[i + 1]
            out[i, mx.indices[lo:hi]] = mx.values[lo:hi]
    elif isinstance(mx, SparseMatrixCSC):
        for j in range(mx.n_cols):
            lo, hi = mx.indptr[j], mx.indptr[j + 1]
            out[mx.indices[lo:hi], j] = mx.values[lo:hi]
    return out


# -- mock remote catalog server -------------------------------------------


class MockDiscover:
    """Local HTTP stand-in for the remote dataset catalog.

    Serves a configurable collections listing and byte assets with HTTP
    Range support. Fault injection: ``fail_after[name] = k`` makes the
    next request for that asset drop the connection after k body bytes
    (one-shot); ``malformed_body`` replaces the listing JSON verbatim;
    ``ignore_range`` makes asset responses always start from byte 0.
    """

    def __init__(self):
        self.collections = []
        self.assets: dict[str, bytes] = {}
        self.fail_after: dict[str, int] = {}
        self.malformed_body: bytes | None = None
        self.ignore_range = False
        self.requests: list[tuple[str, str | None]] = []

        mock = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def do_GET(self):
                mock.requests.append((self.path, self.headers.get("Range")))
                if self.path.startswith("/curation/v1/collections"):
                    body = (
                        mock.malformed_body
                        if mock.malformed_body is not None
                        else json.dumps(mock.collections).encode()
                    )
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                    return
                if self.path.startswith("/assets/"):
                    name = self.path[len("/assets/") :]
                    data = mock.assets.get(name)
                    if data is None:
                        self.send_response(404)
                        self.send_header("Content-Length", "0")
                        self.end_headers()
                        return
                    start = 0
                    rng = self.headers.get("Range")
                    status = 200
                    if rng and not mock.ignore_range:
                        start = int(rng.split("=")[1].rstrip("-"))
                        if start >= len(data):
                            self.send_response(416)
                            self.send_header("Content-Length", "0")
                            self.end_headers()
                            return
                        status = 206
                    chunk = data[start:]
                    self.send_response(status)
                    if status == 206:
                        self.send_header(
                            "Content-Range",
                            f"bytes {start}-{len(data) - 1}/{len(data)}",
                        )
                    self.send_header("Content-Length", str(len(chunk)))
                    self.end_headers()
                    cut = mock.fail_after.pop(name, None)
                    if cut is not None and cut < len(chunk):
                        self.wfile.write(chunk[:cut])
                        self.wfile.flush()
                        # shutdown (not close) so the FIN reaches the client
                        # now; rfile/wfile still hold refs on the socket
                        self.connection.shutdown(socket.SHUT_RDWR)
                        self.close_connection = True
                        return
                    self.wfile.write(chunk)
                    return
                self.send_response(404)
                self.send_header("Content-Length", "0")
                self.end_headers()

        class QuietServer(ThreadingHTTPServer):
            daemon_threads = True

            def handle_error(self, request, client_address):
                pass  # injected disconnects are expected; keep stderr clean

        self._server = QuietServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True
        )
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def asset_url(self, name: str) -> str:
        return f"{self.base_url}/assets/{name}"

    def add_asset(self, name: str, data: bytes):
        self.assets[name] = data

    def set_collections(self, collections):
        self.collections = collections

    def stop(self):
        self._server.shutdown()
        self._server.server_close()


def simple_listing(mock: MockDiscover, with_asset=True, sha=None):
    """Three collections, one downloadable dataset in the first."""
    data = bytes(range(256)) * 4096  # 1 MiB
    mock.add_asset("ds1.h5ad", data)
    asset = (
        [
            {
                "filetype": "H5AD",
                "url": mock.asset_url("ds1.h5ad"),
                "filesize": len(data),
                **({"sha256": sha} if sha else {}),
            }
        ]
        if with_asset
        else []
    )
    mock.set_collections(
        [
            {
                "collection_id": "c1",
                "name": "Lung cell atlas",
                "datasets": [{"dataset_id": "ds1", "title": "lung sample", "assets": asset}],
            },
            {
                "collection_id": "c2",
                "name": "Heart map",
                "datasets": [{"dataset_id": "ds2", "title": "heart sample", "assets": []}],
            },
            {"collection_id": "c3", "name": "Brain survey", "datasets": []},
        ]
    )
    return data
