/** JSON shapes served by the expression backend.
 *
 * Non-finite floats cross the wire as the strings "inf" / "-inf" and
 * NaN as null, because JSON has no infinities. The HUD displays wire
 * values verbatim; nothing is recomputed client-side.
 */

export type WireFloat = number | "inf" | "-inf" | null;

export interface AnnotationMeta {
    name: string;
    categories: string[];
    counts: number[];
    /** #rrggbb per category, same palette the backend reports everywhere. */
    colors: string[];
    /** Per-category centroid in default-embedding space; null when empty. */
    centroids: ([number, number, number] | null)[];
}

export interface EmbeddingMeta {
    name: string;
    dims: number;
}

export interface DatasetMeta {
    dataset_id: string;
    n_cells: number;
    n_genes: number;
    has_markers: boolean;
    annotations: AnnotationMeta[];
    embeddings: EmbeddingMeta[];
    default_embedding: string | null;
}

export interface GeneMatch {
    gene_index: number;
    name: string;
}

export interface MarkerRecordJson {
    gene_index: number;
    gene_name: string;
    t: WireFloat;
    df: WireFloat;
    p_value: WireFloat;
    log_fold_change: WireFloat;
    mean_selected: WireFloat;
    mean_rest: WireFloat;
}

export interface MarkerTableJson {
    group_label: string;
    annotation: string | null;
    n_selected: number;
    n_rest: number;
    skipped_reason: string | null;
    records: MarkerRecordJson[];
    /** Ready-to-copy TSV rendering of the table, produced server-side. */
    tsv: string;
}

export interface DeResponse extends MarkerTableJson {
    selected_count: number;
}

export interface SessionInfo {
    session_id: string;
    dataset_id: string;
    n_cells: number;
}

export interface SelectionResponse {
    selected_count: number;
    /** The authoritative selected cell indices, sorted ascending. */
    indices: number[];
}

export interface ViewStateJson {
    mode: "metadata" | "expression";
    active_annotation: number;
    gene_set: number[];
    gene_cursor: number;
    current_gene: number | null;
    current_gene_name: string | null;
}

export interface NormalizationInfo {
    gene_name: string;
    raw_min: number;
    raw_max: number;
    clip_value: number;
}

export interface JobInfo {
    job_id: string;
    kind: string;
    dataset_id: string;
    state: "running" | "done" | "failed";
    error: string | null;
    progress: number | null;
}

export interface LocalDataset {
    dataset_id: string;
    title: string;
    state: string;
    source: string;
}
