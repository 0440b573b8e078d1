/** Typed client for the expression backend's HTTP API.
 *
 * The transport is injectable so tests can run against canned
 * responses. Selection, DE, and view mutations for a session are
 * chained on a per-session promise queue: a mutation is not sent until
 * the previous one has settled, so the server never applies them out
 * of order.
 */

import {
    decodeAnnotationBlock,
    decodeEmbeddingBlock,
    decodeExpressionBlock,
    type AnnotationBlock,
    type EmbeddingBlock,
    type ExpressionBlock,
} from "./blocks.js";
import type {
    DatasetMeta,
    DeResponse,
    GeneMatch,
    JobInfo,
    LocalDataset,
    MarkerTableJson,
    SelectionResponse,
    SessionInfo,
    ViewStateJson,
} from "./types.js";

export type Transport = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
    constructor(
        readonly code: string,
        message: string,
        readonly status: number,
        readonly detail: unknown = null,
    ) {
        super(message);
    }
}

async function toApiError(resp: Response): Promise<ApiError> {
    try {
        const body = await resp.json();
        const err = body?.error;
        if (err && typeof err.code === "string") {
            return new ApiError(err.code, err.message ?? resp.statusText, resp.status, err.detail);
        }
    } catch {
        // fall through to the generic error below
    }
    return new ApiError("internal", resp.statusText || `HTTP ${resp.status}`, resp.status);
}

export class ApiClient {
    private mutationQueues = new Map<string, Promise<unknown>>();

    constructor(
        private readonly base: string = "",
        private readonly transport: Transport = (url, init) => fetch(url, init),
    ) {}

    private async request(path: string, init?: RequestInit): Promise<Response> {
        const resp = await this.transport(this.base + path, init);
        if (!resp.ok) {
            throw await toApiError(resp);
        }
        return resp;
    }

    private async json<T>(path: string, init?: RequestInit): Promise<T> {
        return (await this.request(path, init)).json() as Promise<T>;
    }

    private post<T>(path: string, body: unknown): Promise<T> {
        return this.json<T>(path, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(body),
        });
    }

    /** Serialize one session's mutations; later ops wait for earlier ones. */
    private sequenced<T>(sessionId: string, op: () => Promise<T>): Promise<T> {
        const prev = this.mutationQueues.get(sessionId) ?? Promise.resolve();
        const next = prev.then(op, op);
        this.mutationQueues.set(sessionId, next.then(() => undefined, () => undefined));
        return next;
    }

    getMeta(datasetId: string): Promise<DatasetMeta> {
        return this.json(`/datasets/${encodeURIComponent(datasetId)}/meta`);
    }

    async searchGenes(datasetId: string, query: string): Promise<GeneMatch[]> {
        const body = await this.json<{ matches: GeneMatch[] }>(
            `/datasets/${encodeURIComponent(datasetId)}/genes?q=${encodeURIComponent(query)}`,
        );
        return body.matches;
    }

    async getEmbedding(datasetId: string, name = "default"): Promise<EmbeddingBlock> {
        const resp = await this.request(
            `/datasets/${encodeURIComponent(datasetId)}/embedding/${encodeURIComponent(name)}`,
        );
        return decodeEmbeddingBlock(await resp.arrayBuffer());
    }

    async getAnnotation(datasetId: string, name: string): Promise<AnnotationBlock> {
        const resp = await this.request(
            `/datasets/${encodeURIComponent(datasetId)}/annotation/${encodeURIComponent(name)}`,
        );
        return decodeAnnotationBlock(await resp.arrayBuffer());
    }

    async getExpression(datasetId: string, gene: number | string): Promise<ExpressionBlock> {
        const resp = await this.request(
            `/datasets/${encodeURIComponent(datasetId)}/expression/${encodeURIComponent(String(gene))}`,
        );
        return decodeExpressionBlock(await resp.arrayBuffer());
    }

    getMarkers(datasetId: string, annotation: string, category: string): Promise<MarkerTableJson> {
        return this.json(
            `/datasets/${encodeURIComponent(datasetId)}/markers/` +
                `${encodeURIComponent(annotation)}/${encodeURIComponent(category)}`,
        );
    }

    async localCatalog(): Promise<LocalDataset[]> {
        const body = await this.json<{ datasets: LocalDataset[] }>("/catalog/local");
        return body.datasets;
    }

    getJob(jobId: string): Promise<JobInfo> {
        return this.json(`/jobs/${encodeURIComponent(jobId)}`);
    }

    openSession(datasetId: string): Promise<SessionInfo> {
        return this.post("/sessions", { dataset_id: datasetId });
    }

    postSelection(sessionId: string, body: unknown): Promise<SelectionResponse> {
        return this.sequenced(sessionId, () =>
            this.post(`/sessions/${encodeURIComponent(sessionId)}/selection`, body),
        );
    }

    runDe(sessionId: string): Promise<DeResponse> {
        return this.sequenced(sessionId, () =>
            this.post(`/sessions/${encodeURIComponent(sessionId)}/de`, {}),
        );
    }

    postView(
        sessionId: string,
        action: string,
        genes?: number[],
    ): Promise<ViewStateJson> {
        const body: Record<string, unknown> = { action };
        if (genes !== undefined) {
            body.genes = genes;
        }
        return this.sequenced(sessionId, () =>
            this.post(`/sessions/${encodeURIComponent(sessionId)}/view`, body),
        );
    }
}
