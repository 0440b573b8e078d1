/** Embedding payloads to renderable point buffers. */

export interface Bounds {
    min: [number, number, number];
    max: [number, number, number];
}

/** Expand server coords to xyz triples; planar embeddings get z = 0. */
export function positionsFromEmbedding(
    coords: Float32Array,
    nCells: number,
    dims: number,
): Float32Array {
    if (coords.length !== nCells * dims) {
        throw new Error(
            `embedding payload has ${coords.length} floats, expected ${nCells * dims}`,
        );
    }
    if (dims === 3) {
        return coords;
    }
    if (dims !== 2) {
        throw new Error(`unsupported embedding dimensionality ${dims}`);
    }
    const out = new Float32Array(nCells * 3);
    for (let i = 0; i < nCells; i++) {
        out[i * 3] = coords[i * 2];
        out[i * 3 + 1] = coords[i * 2 + 1];
    }
    return out;
}

export function computeBounds(positions: Float32Array): Bounds {
    if (positions.length === 0) {
        return { min: [0, 0, 0], max: [0, 0, 0] };
    }
    const min: [number, number, number] = [Infinity, Infinity, Infinity];
    const max: [number, number, number] = [-Infinity, -Infinity, -Infinity];
    for (let i = 0; i < positions.length; i += 3) {
        for (let axis = 0; axis < 3; axis++) {
            const v = positions[i + axis];
            if (v < min[axis]) min[axis] = v;
            if (v > max[axis]) max[axis] = v;
        }
    }
    return { min, max };
}
