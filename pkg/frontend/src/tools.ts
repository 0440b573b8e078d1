/** Selection gestures become server requests; nothing is resolved here.
 *
 * Sphere drags ship (center, radius) in embedding coordinates; lassos
 * ship the screen polygon plus the exact view transform that produced
 * it, so the backend replays the same projection and stays the single
 * authority on which cells are selected.
 */

export type SelectionMode = "add" | "replace" | "reset";

export class DegenerateGesture extends Error {}

export interface SelectionBody {
    mode: SelectionMode;
    tool: "sphere" | "lasso" | "indices";
    sphere?: { center: [number, number, number]; radius: number };
    lasso?: { polygon: [number, number][]; view_transform: number[] };
    indices?: number[];
    embedding?: string;
}

export function sphereSelectionBody(
    center: [number, number, number],
    radius: number,
    mode: SelectionMode = "add",
    embedding?: string,
): SelectionBody {
    if (!(radius > 0)) {
        throw new DegenerateGesture(`sphere radius must be positive, got ${radius}`);
    }
    const body: SelectionBody = { mode, tool: "sphere", sphere: { center, radius } };
    if (embedding !== undefined) {
        body.embedding = embedding;
    }
    return body;
}

export function lassoSelectionBody(
    polygon: [number, number][],
    viewTransformRowMajor: number[],
    mode: SelectionMode = "add",
    embedding?: string,
): SelectionBody {
    if (polygon.length < 3) {
        throw new DegenerateGesture(
            `a lasso needs at least 3 vertices, got ${polygon.length}`,
        );
    }
    if (viewTransformRowMajor.length !== 16) {
        throw new DegenerateGesture("view transform must have 16 entries");
    }
    const body: SelectionBody = {
        mode,
        tool: "lasso",
        lasso: { polygon, view_transform: viewTransformRowMajor },
    };
    if (embedding !== undefined) {
        body.embedding = embedding;
    }
    return body;
}

export function indicesSelectionBody(
    indices: number[],
    mode: SelectionMode = "replace",
): SelectionBody {
    return { mode, tool: "indices", indices };
}

export function resetSelectionBody(): SelectionBody {
    return { mode: "reset", tool: "indices", indices: [] };
}

/** CSS pixel coordinates inside a rect to normalized device coords. */
export function pointerToNdc(
    x: number,
    y: number,
    width: number,
    height: number,
): [number, number] {
    return [(x / width) * 2 - 1, -((y / height) * 2 - 1)];
}

/** Flatten a column-major 4x4 (GL convention) to the server's row-major list. */
export function columnMajorToRowMajor(elements: ArrayLike<number>): number[] {
    if (elements.length !== 16) {
        throw new Error(`expected 16 matrix elements, got ${elements.length}`);
    }
    const out = new Array<number>(16);
    for (let row = 0; row < 4; row++) {
        for (let col = 0; col < 4; col++) {
            out[row * 4 + col] = elements[col * 4 + row];
        }
    }
    return out;
}
