/** Browser entry point: wires the API client, scene, and HUD together.
 *
 * All state that affects analysis (selection, view mode, gene set)
 * round-trips through the session endpoints; this module only decides
 * when to ask and repaints from the answers.
 */

import { ApiClient, ApiError } from "./api.js";
import { categoryColorArray } from "./colors.js";
import { Hud } from "./hud.js";
import { LabelAnchor, sceneDiagonal, visibleLabels } from "./labels.js";
import { positionsFromEmbedding } from "./points.js";
import { PointCloudScene } from "./scene.js";
import { SelectionController } from "./selection.js";
import {
    DegenerateGesture,
    lassoSelectionBody,
    resetSelectionBody,
    sphereSelectionBody,
} from "./tools.js";
import { AnnotationMeta, DatasetMeta, ViewStateJson } from "./types.js";

type Tool = "orbit" | "sphere" | "lasso";

// Proximity-label trigger distance as a fraction of the scene diagonal.
// Tunable per page load: ?labelDistance=0.8
function labelDistanceFactor(): number {
    const raw = new URLSearchParams(window.location.search).get("labelDistance");
    const parsed = raw === null ? NaN : Number(raw);
    return Number.isFinite(parsed) && parsed >= 0 ? parsed : 0.45;
}

const LABEL_DISTANCE_FACTOR = labelDistanceFactor();

function byId(id: string): HTMLElement {
    const el = document.getElementById(id);
    if (!el) {
        throw new Error(`missing required element #${id}`);
    }
    return el;
}

class App {
    private api = new ApiClient();
    private hud: Hud;
    private scene!: PointCloudScene;
    private selection!: SelectionController;
    private meta!: DatasetMeta;
    private datasetId!: string;
    private sessionId!: string;
    private view: ViewStateJson = {
        mode: "metadata",
        active_annotation: 0,
        gene_set: [],
        gene_cursor: 0,
        current_gene: null,
        current_gene_name: null,
    };
    private tool: Tool = "orbit";
    private lassoPoints: [number, number][] = [];
    private sphereAnchor: { index: number; position: [number, number, number] } | null =
        null;
    private sphereRadius = 0;
    private labelAnchors: LabelAnchor[] = [];
    private labelDivs: HTMLElement[] = [];
    private lastLabelUpdate = 0;
    private overlay: HTMLCanvasElement;

    constructor() {
        this.hud = new Hud(byId("hud"));
        this.overlay = byId("overlay") as HTMLCanvasElement;
    }

    async boot(): Promise<void> {
        const datasets = await this.api.localCatalog();
        const ready = datasets.filter(
            (d) => d.state === "processed" || d.state === "both",
        );
        if (ready.length === 0) {
            this.hud.showError(
                datasets.length === 0
                    ? "no datasets in the data directory; download or synthesize one first"
                    : "no processed dataset; run ingest on one of the raw datasets first",
            );
            return;
        }
        this.datasetId = ready[0].dataset_id;
        this.meta = await this.api.getMeta(this.datasetId);

        const embeddingName = this.meta.default_embedding ?? undefined;
        const embedding = await this.api.getEmbedding(this.datasetId, embeddingName);
        const positions = positionsFromEmbedding(
            embedding.coords,
            embedding.nCells,
            embedding.dims,
        );
        this.scene = new PointCloudScene(byId("scene"), positions);

        const session = await this.api.openSession(this.datasetId);
        this.sessionId = session.session_id;
        this.selection = new SelectionController(this.api, this.sessionId);
        this.selection.onChange = (selected) => {
            this.scene.setSelection(selected);
            this.hud.setSelectionStatus(selected.size, this.meta.n_cells);
        };

        if (this.meta.annotations.length > 0) {
            await this.applyAnnotation(0);
        }
        this.hud.setSelectionStatus(0, this.meta.n_cells);
        this.hud.setMode("metadata");

        this.bindToolbar();
        this.bindPointer();
        this.bindKeys();
        this.scene.onFrame = (cameraPosition) => this.updateLabels(cameraPosition);
        this.scene.start();
        this.syncOverlaySize();
    }

    private annotation(index: number): AnnotationMeta {
        return this.meta.annotations[index];
    }

    private async applyAnnotation(index: number): Promise<void> {
        const ann = this.annotation(index);
        const block = await this.api.getAnnotation(this.datasetId, ann.name);
        this.scene.setCategoryColors(categoryColorArray(block.codes, ann.colors));
        this.hud.setAnnotationKey(ann);
        this.labelAnchors = [];
        ann.categories.forEach((category, i) => {
            const c = ann.centroids[i];
            if (c !== null) {
                this.labelAnchors.push({ text: category, position: c });
            }
        });
        this.rebuildLabelDivs();
    }

    private async applyView(action: string, genes?: number[]): Promise<void> {
        this.view = await this.api.postView(this.sessionId, action, genes);
        this.scene.setMode(this.view.mode);
        this.hud.setMode(this.view.mode);
        if (this.view.mode === "metadata") {
            if (this.meta.annotations.length > 0) {
                await this.applyAnnotation(
                    this.view.active_annotation % this.meta.annotations.length,
                );
            }
            return;
        }
        if (this.view.current_gene !== null) {
            const block = await this.api.getExpression(
                this.datasetId,
                this.view.current_gene,
            );
            this.scene.setExpression(block.values);
            this.hud.setExpressionScale(block.info);
        }
    }

    private guard(work: () => Promise<void>): void {
        work()
            .then(() => this.hud.clearError())
            .catch((err) => {
                if (err instanceof ApiError || err instanceof DegenerateGesture) {
                    this.hud.showError(err.message);
                } else {
                    this.hud.showError(String(err));
                    throw err;
                }
            });
    }

    private bindToolbar(): void {
        byId("btn-mode").addEventListener("click", () =>
            this.guard(() => this.applyView("toggle_mode")),
        );
        byId("btn-annotation").addEventListener("click", () =>
            this.guard(() => this.applyView("next_annotation")),
        );
        byId("btn-prev-gene").addEventListener("click", () =>
            this.guard(() => this.applyView("prev_gene")),
        );
        byId("btn-next-gene").addEventListener("click", () =>
            this.guard(() => this.applyView("next_gene")),
        );
        byId("btn-de").addEventListener("click", () =>
            this.guard(async () => {
                const table = await this.api.runDe(this.sessionId);
                this.hud.setMarkers(table);
            }),
        );
        byId("btn-copy").addEventListener("click", () =>
            this.guard(async () => {
                const copied = await this.hud.copyMarkers(navigator.clipboard);
                if (!copied) {
                    this.hud.showError("no marker table to copy");
                }
            }),
        );
        byId("btn-reset").addEventListener("click", () =>
            this.guard(async () => {
                await this.selection.apply(resetSelectionBody());
                this.hud.clearMarkers();
            }),
        );
        const search = byId("gene-search") as HTMLInputElement;
        const matchesList = byId("gene-matches");
        let searchTimer: ReturnType<typeof setTimeout> | undefined;
        search.addEventListener("input", () => {
            clearTimeout(searchTimer);
            const query = search.value.trim();
            if (query === "") {
                matchesList.textContent = "";
                return;
            }
            searchTimer = setTimeout(() => {
                this.api
                    .searchGenes(this.datasetId, query)
                    .then((matches) => {
                        matchesList.textContent = "";
                        for (const m of matches.slice(0, 20)) {
                            const option = document.createElement("option");
                            option.value = m.name;
                            matchesList.appendChild(option);
                        }
                    })
                    .catch(() => undefined);
            }, 150);
        });
        search.addEventListener("keydown", (event) => {
            if (event.key !== "Enter") {
                return;
            }
            const query = search.value.trim();
            if (query === "") {
                return;
            }
            this.guard(async () => {
                const matches = await this.api.searchGenes(this.datasetId, query);
                if (matches.length === 0) {
                    this.hud.showError(`no gene matches ${JSON.stringify(query)}`);
                    return;
                }
                await this.applyView(
                    "load_gene_set",
                    matches.map((m) => m.gene_index),
                );
                if (this.view.mode === "metadata") {
                    await this.applyView("toggle_mode");
                }
            });
        });
        for (const tool of ["orbit", "sphere", "lasso"] as Tool[]) {
            byId(`tool-${tool}`).addEventListener("click", () => this.setTool(tool));
        }
        this.setTool("orbit");
    }

    private setTool(tool: Tool): void {
        this.tool = tool;
        this.scene.setOrbitEnabled(tool === "orbit");
        for (const t of ["orbit", "sphere", "lasso"] as Tool[]) {
            byId(`tool-${t}`).classList.toggle("active", t === tool);
        }
    }

    private bindPointer(): void {
        const canvas = this.scene.domElement();
        canvas.addEventListener("pointerdown", (event) => {
            if (this.tool === "sphere") {
                const picked = this.scene.pickNearest(
                    this.scene.screenToNdc(event.clientX, event.clientY),
                );
                if (picked === null) {
                    this.hud.showError("no cell under the pointer");
                    return;
                }
                this.sphereAnchor = picked;
                this.sphereRadius = this.scene.diagonal() / 40;
                canvas.setPointerCapture(event.pointerId);
            } else if (this.tool === "lasso") {
                this.lassoPoints = [this.scene.screenToNdc(event.clientX, event.clientY)];
                canvas.setPointerCapture(event.pointerId);
            }
        });
        canvas.addEventListener("pointermove", (event) => {
            if (this.tool === "sphere" && this.sphereAnchor !== null) {
                // Drag distance scales the brush between 1% and 25% of the scene.
                const d = Math.hypot(event.movementX, event.movementY);
                this.sphereRadius = Math.min(
                    Math.max(
                        this.sphereRadius + (d * this.scene.diagonal()) / 2000,
                        this.scene.diagonal() / 100,
                    ),
                    this.scene.diagonal() / 4,
                );
            } else if (this.tool === "lasso" && this.lassoPoints.length > 0) {
                const ndc = this.scene.screenToNdc(event.clientX, event.clientY);
                const last = this.lassoPoints[this.lassoPoints.length - 1];
                if (Math.hypot(ndc[0] - last[0], ndc[1] - last[1]) > 0.01) {
                    this.lassoPoints.push(ndc);
                    this.drawLasso();
                }
            }
        });
        canvas.addEventListener("pointerup", (event) => {
            if (this.tool === "sphere" && this.sphereAnchor !== null) {
                const anchor = this.sphereAnchor;
                const radius = this.sphereRadius;
                this.sphereAnchor = null;
                const mode = event.shiftKey ? "add" : "replace";
                this.guard(async () => {
                    await this.selection.apply(
                        sphereSelectionBody(anchor.position, radius, mode),
                    );
                });
            } else if (this.tool === "lasso" && this.lassoPoints.length > 0) {
                const polygon = this.lassoPoints;
                this.lassoPoints = [];
                this.clearOverlay();
                const mode = event.shiftKey ? "add" : "replace";
                this.guard(async () => {
                    // Degenerate gestures are refused here, before any request.
                    const body = lassoSelectionBody(
                        polygon,
                        this.scene.viewTransformRowMajor(),
                        mode,
                    );
                    await this.selection.apply(body);
                });
            }
        });
        window.addEventListener("resize", () => this.syncOverlaySize());
    }

    private bindKeys(): void {
        window.addEventListener("keydown", (event) => {
            if ((event.target as HTMLElement | null)?.tagName === "INPUT") {
                return;
            }
            if (event.key === "m") {
                this.guard(() => this.applyView("toggle_mode"));
            } else if (event.key === "a") {
                byId("btn-annotation").click();
            } else if (event.key === "[") {
                this.guard(() => this.applyView("prev_gene"));
            } else if (event.key === "]") {
                this.guard(() => this.applyView("next_gene"));
            } else if (event.key === "Escape") {
                byId("btn-reset").click();
            }
        });
    }

    private syncOverlaySize(): void {
        const canvas = this.scene.domElement();
        this.overlay.width = canvas.clientWidth;
        this.overlay.height = canvas.clientHeight;
    }

    private drawLasso(): void {
        const ctx = this.overlay.getContext("2d");
        if (!ctx) {
            return;
        }
        ctx.clearRect(0, 0, this.overlay.width, this.overlay.height);
        ctx.strokeStyle = "#fde725";
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        this.lassoPoints.forEach(([nx, ny], i) => {
            const x = ((nx + 1) / 2) * this.overlay.width;
            const y = ((1 - ny) / 2) * this.overlay.height;
            if (i === 0) {
                ctx.moveTo(x, y);
            } else {
                ctx.lineTo(x, y);
            }
        });
        ctx.stroke();
    }

    private clearOverlay(): void {
        const ctx = this.overlay.getContext("2d");
        ctx?.clearRect(0, 0, this.overlay.width, this.overlay.height);
    }

    private rebuildLabelDivs(): void {
        const host = byId("labels");
        host.textContent = "";
        this.labelDivs = this.labelAnchors.map((anchor) => {
            const div = document.createElement("div");
            div.className = "scene-label";
            div.textContent = anchor.text;
            div.style.display = "none";
            host.appendChild(div);
            return div;
        });
    }

    private overlapsHud(screen: [number, number]): boolean {
        const rect = byId("hud").getBoundingClientRect();
        if (rect.width === 0 && rect.height === 0) {
            return false;
        }
        return (
            screen[0] >= rect.left &&
            screen[0] <= rect.right &&
            screen[1] >= rect.top &&
            screen[1] <= rect.bottom
        );
    }

    private updateLabels(cameraPosition: [number, number, number]): void {
        const now = performance.now();
        if (now - this.lastLabelUpdate < 100) {
            return;
        }
        this.lastLabelUpdate = now;
        if (this.view.mode !== "metadata" || this.labelAnchors.length === 0) {
            for (const div of this.labelDivs) {
                div.style.display = "none";
            }
            return;
        }
        const diagonal = sceneDiagonal(this.scene.bounds.min, this.scene.bounds.max);
        const visible = new Set(
            visibleLabels(
                this.labelAnchors,
                cameraPosition,
                diagonal,
                LABEL_DISTANCE_FACTOR,
            ).map((l) => l.text),
        );
        this.labelAnchors.forEach((anchor, i) => {
            const div = this.labelDivs[i];
            if (!visible.has(anchor.text)) {
                div.style.display = "none";
                return;
            }
            const screen = this.scene.projectToScreen(anchor.position);
            if (screen === null || this.overlapsHud(screen)) {
                div.style.display = "none";
                return;
            }
            div.style.display = "";
            div.style.left = `${screen[0]}px`;
            div.style.top = `${screen[1]}px`;
        });
    }
}

new App().boot().catch((err) => {
    const hudRoot = document.getElementById("hud");
    if (hudRoot) {
        hudRoot.textContent = `failed to start: ${err}`;
    }
    console.error(err);
});
