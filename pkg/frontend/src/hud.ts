/** Flat screen-space overlay: legend, expression scale, markers, status.
 *
 * Exactly one of the annotation key and the expression scale is shown,
 * depending on the coloring mode. Marker statistics are rendered as the
 * server sent them; the copy button exports the server's TSV unchanged.
 */

import { rampColor } from "./colors.js";
import {
    AnnotationMeta,
    MarkerRecordJson,
    MarkerTableJson,
    NormalizationInfo,
    WireFloat,
} from "./types.js";

export type HudMode = "metadata" | "expression";

/** Wire floats become display text without reformatting finite values. */
export function wireText(value: WireFloat): string {
    if (value === null) {
        return "nan";
    }
    return String(value);
}

function child(parent: HTMLElement, tag: string, className: string): HTMLElement {
    const el = parent.ownerDocument.createElement(tag);
    el.className = className;
    parent.appendChild(el);
    return el;
}

const MARKER_COLUMNS: [keyof MarkerRecordJson, string][] = [
    ["gene_name", "gene"],
    ["t", "t"],
    ["p_value", "p"],
    ["log_fold_change", "log2fc"],
    ["mean_selected", "mean sel"],
    ["mean_rest", "mean rest"],
];

export class Hud {
    readonly key: HTMLElement;
    readonly scale: HTMLElement;
    readonly markers: HTMLElement;
    readonly status: HTMLElement;
    readonly error: HTMLElement;
    private tsv = "";

    constructor(private root: HTMLElement) {
        this.key = child(root, "div", "hud-key");
        this.scale = child(root, "div", "hud-scale");
        this.markers = child(root, "div", "hud-markers");
        this.status = child(root, "div", "hud-status");
        this.error = child(root, "div", "hud-error");
        this.setMode("metadata");
        this.clearError();
    }

    setMode(mode: HudMode): void {
        this.key.style.display = mode === "metadata" ? "" : "none";
        this.scale.style.display = mode === "expression" ? "" : "none";
    }

    setAnnotationKey(annotation: AnnotationMeta): void {
        this.key.textContent = "";
        const title = child(this.key, "div", "hud-key-title");
        title.textContent = annotation.name;
        annotation.categories.forEach((category, i) => {
            const row = child(this.key, "div", "hud-key-row");
            const swatch = child(row, "span", "hud-key-swatch");
            swatch.style.background = annotation.colors[i];
            const label = child(row, "span", "hud-key-label");
            label.textContent = `${category} (${annotation.counts[i]})`;
        });
    }

    setExpressionScale(info: NormalizationInfo): void {
        this.scale.textContent = "";
        const title = child(this.scale, "div", "hud-scale-title");
        title.textContent = info.gene_name;
        const bar = child(this.scale, "div", "hud-scale-bar");
        const stops: string[] = [];
        for (let i = 0; i <= 8; i++) {
            const [r, g, b] = rampColor(i / 8);
            stops.push(
                `rgb(${Math.round(r * 255)},${Math.round(g * 255)},${Math.round(b * 255)})`,
            );
        }
        bar.style.background = `linear-gradient(to right, ${stops.join(",")})`;
        const range = child(this.scale, "div", "hud-scale-range");
        // The unnormalized range, as reported; the ramp itself spans the
        // normalized scale capped at clip_value.
        range.textContent =
            `raw ${info.raw_min} to ${info.raw_max}` +
            ` (ramp caps at ${info.clip_value} log-normalized)`;
    }

    setSelectionStatus(count: number, total: number): void {
        this.status.textContent =
            count === 0 ? `${total} cells` : `${count} of ${total} cells selected`;
    }

    setMarkers(table: MarkerTableJson): void {
        this.tsv = table.tsv;
        this.markers.textContent = "";
        const title = child(this.markers, "div", "hud-markers-title");
        title.textContent = table.annotation
            ? `${table.annotation} = ${table.group_label}`
            : table.group_label;
        if (table.skipped_reason !== null) {
            const note = child(this.markers, "div", "hud-markers-note");
            note.textContent = table.skipped_reason;
            return;
        }
        const grid = child(this.markers, "table", "hud-markers-table");
        const head = child(grid, "tr", "hud-markers-head");
        for (const [, label] of MARKER_COLUMNS) {
            child(head, "th", "hud-markers-cell").textContent = label;
        }
        for (const record of table.records) {
            const row = child(grid, "tr", "hud-markers-row");
            for (const [field] of MARKER_COLUMNS) {
                const cell = child(row, "td", "hud-markers-cell");
                const value: WireFloat | string = record[field];
                cell.textContent = value === null ? "nan" : String(value);
            }
        }
    }

    clearMarkers(): void {
        this.tsv = "";
        this.markers.textContent = "";
    }

    /** The server's TSV for the current table, byte for byte. */
    markersTsv(): string {
        return this.tsv;
    }

    async copyMarkers(clipboard: { writeText(text: string): Promise<void> }): Promise<boolean> {
        if (this.tsv === "") {
            return false;
        }
        await clipboard.writeText(this.tsv);
        return true;
    }

    showError(message: string): void {
        this.error.textContent = message;
        this.error.style.display = "";
    }

    clearError(): void {
        this.error.textContent = "";
        this.error.style.display = "none";
    }
}
