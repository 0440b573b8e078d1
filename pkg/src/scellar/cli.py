"""Command-line interface over the catalog, pipeline, and server."""

from __future__ import annotations

import os
import sys

import click

from . import catalog as catalog_mod
from . import stats
from .anndata_io import open_and_parse
from .discover import DiscoverClient, DiscoverConfig
from .errors import ScellarError
from .store import Store, build_store
from .version import __version__


def _fail(e: Exception) -> None:
    raise click.ClickException(str(e))


@click.group()
@click.version_option(version=__version__, prog_name="scellar")
@click.option(
    "--data-dir",
    envvar="SCELLAR_DATA_DIR",
    default=".",
    show_default=True,
    help="Directory holding raw files, stores, and the catalog manifest.",
)
@click.option(
    "--api-base",
    envvar="SCELLAR_API_BASE",
    default=None,
    help="Override the remote catalog API base URL.",
)
@click.pass_context
def main(ctx: click.Context, data_dir: str, api_base: str | None):
    ctx.ensure_object(dict)
    ctx.obj["data_dir"] = data_dir
    config = DiscoverConfig(cache_dir=os.path.join(data_dir, "cache"))
    if api_base:
        config.base_url = api_base
    ctx.obj["discover"] = config


@main.command()
@click.option("--remote", is_flag=True, help="List the remote catalog instead.")
@click.option("--filter", "name_filter", default="", help="Substring filter on collection names.")
@click.pass_context
def catalog(ctx: click.Context, remote: bool, name_filter: str):
    """List local datasets, or remote collections with --remote."""
    if remote:
        client = DiscoverClient(ctx.obj["discover"])
        try:
            listing = client.list_collections(name_filter)
        except ScellarError as e:
            _fail(e)
        if listing.stale:
            click.echo("# serving cached listing; remote unreachable", err=True)
        for coll in listing.collections:
            click.echo(f"{coll.collection_id}\t{coll.name}")
            for ds in coll.datasets:
                mark = "downloadable" if ds.h5ad_asset_url else "no-asset"
                click.echo(f"  {ds.dataset_id}\t{ds.title}\t{mark}")
        return
    cat = catalog_mod.load_catalog(ctx.obj["data_dir"])
    for entry in sorted(cat.entries.values(), key=lambda e: e.dataset_id):
        click.echo(f"{entry.dataset_id}\t{entry.state}\t{entry.title}")


@main.command()
@click.argument("dataset_id")
@click.pass_context
def download(ctx: click.Context, dataset_id: str):
    """Download a remote dataset's h5ad into the data directory."""
    client = DiscoverClient(ctx.obj["discover"])
    try:
        listing = client.list_collections("")
        remote = None
        for coll in listing.collections:
            for ds in coll.datasets:
                if ds.dataset_id == dataset_id:
                    remote = ds
        if remote is None:
            raise click.ClickException(f"no remote dataset {dataset_id!r}")
        label = f"downloading {dataset_id}"
        with click.progressbar(length=remote.asset_size_bytes or 0, label=label) as bar:
            def progress(done, total):
                if total and bar.length != total:
                    bar.length = total
                bar.update(done - bar.pos)

            path = client.download_dataset(
                remote,
                ctx.obj["data_dir"],
                progress=progress,
                register_in=ctx.obj["data_dir"],
            )
        click.echo(path)
    except ScellarError as e:
        _fail(e)


@main.command()
@click.argument("dataset_id")
@click.option(
    "--h5ad",
    "h5ad_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Register this h5ad file for the dataset before ingesting.",
)
@click.pass_context
def ingest(ctx: click.Context, dataset_id: str, h5ad_path: str | None):
    """Parse a dataset's h5ad and build its serving store."""
    data_dir = ctx.obj["data_dir"]
    try:
        if h5ad_path is not None:
            catalog_mod.register_raw(data_dir, dataset_id, os.path.abspath(h5ad_path))
        entry = catalog_mod.load_catalog(data_dir).get(dataset_id)
        if not entry.raw_path:
            raise click.ClickException(
                f"dataset {dataset_id!r} has no raw h5ad; pass --h5ad or download first"
            )
        raw = open_and_parse(entry.raw_path)
        dest = catalog_mod.store_path_for(data_dir, dataset_id)
        header = build_store(raw, dest)
        catalog_mod.mark_processed(data_dir, dataset_id, dest)
        click.echo(f"{dest}\t{header.n_cells} cells\t{header.n_genes} genes")
    except ScellarError as e:
        _fail(e)


@main.command()
@click.argument("dataset_id")
@click.pass_context
def precompute(ctx: click.Context, dataset_id: str):
    """Precompute per-category marker tables into the store."""
    data_dir = ctx.obj["data_dir"]
    try:
        entry = catalog_mod.load_catalog(data_dir).get(dataset_id)
        if not entry.store_path:
            raise click.ClickException(f"dataset {dataset_id!r} has no store; ingest first")
        tables = stats.precompute_markers(entry.store_path)
    except ScellarError as e:
        _fail(e)
    for annotation, per_category in tables.items():
        for category, table in per_category.items():
            status = table.skipped_reason or f"{len(table.records)} markers"
            click.echo(f"{annotation}/{category}\t{status}")


def _open_store(data_dir: str, dataset_id: str) -> Store:
    entry = catalog_mod.load_catalog(data_dir).get(dataset_id)
    if not entry.store_path:
        raise click.ClickException(f"dataset {dataset_id!r} has no store; ingest first")
    return Store(entry.store_path)


@main.command()
@click.argument("dataset_id")
@click.option("--annotation", required=True, help="Annotation column to select by.")
@click.option("--category", required=True, help="Category selected against the rest.")
@click.pass_context
def de(ctx: click.Context, dataset_id: str, annotation: str, category: str):
    """Run differential expression for one category versus all other cells."""
    try:
        store = _open_store(ctx.obj["data_dir"], dataset_id)
        col = next((c for c in store.annotations if c.name == annotation), None)
        if col is None:
            raise click.ClickException(f"no annotation {annotation!r}")
        if category not in col.categories:
            raise click.ClickException(
                f"no category {category!r} in annotation {annotation!r}"
            )
        code = col.categories.index(category)
        mask = stats.SelectionMask(col.codes == code)
        table = stats.differential_expression(store, mask)
        table.annotation = annotation
        table.group_label = category
        click.echo(stats.to_tsv(table), nl=False)
    except ScellarError as e:
        _fail(e)


@main.command()
@click.argument("dataset_id")
@click.option("--annotation", required=True)
@click.option("--category", required=True)
@click.pass_context
def markers(ctx: click.Context, dataset_id: str, annotation: str, category: str):
    """Print a precomputed marker table as TSV."""
    try:
        store = _open_store(ctx.obj["data_dir"], dataset_id)
        table = stats.load_markers(store, annotation, category)
        if table.skipped_reason:
            click.echo(f"# skipped: {table.skipped_reason}", err=True)
        click.echo(stats.to_tsv(table), nl=False)
    except ScellarError as e:
        _fail(e)


@main.command()
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--cells", default=100, show_default=True)
@click.option("--genes", default=20, show_default=True)
@click.option("--seed", default=1234, show_default=True)
@click.option(
    "--layout",
    type=click.Choice(["csr", "csc", "dense"]),
    default="csr",
    show_default=True,
)
def synth(out_path: str, cells: int, genes: int, seed: int, layout: str):
    """Write the enriched-gene synthetic fixture as an h5ad file."""
    from .synth import enriched_raw, write_h5ad

    try:
        raw = enriched_raw(n_cells=cells, n_genes=genes, seed=seed)
        write_h5ad(raw, out_path, layout=layout)
    except (ScellarError, ValueError) as e:
        _fail(e)
    click.echo(out_path)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", envvar="SCELLAR_PORT", default=8077, show_default=True)
@click.option(
    "--static-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Serve a built viewer bundle at /.",
)
@click.pass_context
def serve(ctx: click.Context, host: str, port: int, static_dir: str | None):
    """Run the HTTP API server."""
    from .service import serve as run_server

    try:
        run_server(
            host=host,
            port=port,
            data_dir=ctx.obj["data_dir"],
            discover_config=ctx.obj["discover"],
            static_dir=static_dir,
        )
    except ScellarError as e:
        _fail(e)


if __name__ == "__main__":
    main(sys.argv[1:])
