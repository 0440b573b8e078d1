/** Color semantics mirrored from the backend.
 *
 * Categorical colors arrive as hex strings in dataset metadata and are
 * used as-is. Expression values arrive already normalized and
 * quantized to 16 bits; the fixed ramp below maps them to color with
 * no client-side re-normalization. The ramp is applied in the vertex
 * stage via a lookup texture built from the same stops.
 */

/** Anchor stops of the perceptually uniform ramp (dark to bright). */
export const RAMP_STOPS: readonly string[] = [
    "#440154",
    "#472d7b",
    "#3b528b",
    "#2c728e",
    "#21918c",
    "#28ae80",
    "#5ec962",
    "#addc30",
    "#fde725",
];

export function hexToRgb(hex: string): [number, number, number] {
    const m = /^#?([0-9a-fA-F]{6})$/.exec(hex);
    if (!m) {
        throw new Error(`not a #rrggbb color: ${hex}`);
    }
    const v = parseInt(m[1], 16);
    return [((v >> 16) & 0xff) / 255, ((v >> 8) & 0xff) / 255, (v & 0xff) / 255];
}

/** Ramp color for a normalized value in [0, 1], linear between stops. */
export function rampColor(u: number): [number, number, number] {
    const t = Math.min(Math.max(u, 0), 1) * (RAMP_STOPS.length - 1);
    const lo = Math.min(Math.floor(t), RAMP_STOPS.length - 2);
    const f = t - lo;
    const a = hexToRgb(RAMP_STOPS[lo]);
    const b = hexToRgb(RAMP_STOPS[lo + 1]);
    return [
        a[0] + (b[0] - a[0]) * f,
        a[1] + (b[1] - a[1]) * f,
        a[2] + (b[2] - a[2]) * f,
    ];
}

/** RGB lookup table for the ramp texture, `n` entries of 3 floats. */
export function buildRampLut(n = 256): Float32Array {
    const lut = new Float32Array(n * 3);
    for (let i = 0; i < n; i++) {
        const [r, g, b] = rampColor(i / (n - 1));
        lut[3 * i] = r;
        lut[3 * i + 1] = g;
        lut[3 * i + 2] = b;
    }
    return lut;
}

const UNASSIGNED: [number, number, number] = [0.5, 0.5, 0.5];

/** Per-point RGB from category codes and the server's palette. */
export function categoryColorArray(
    codes: ArrayLike<number>,
    hexColors: readonly string[],
): Float32Array {
    const palette = hexColors.map(hexToRgb);
    const out = new Float32Array(codes.length * 3);
    for (let i = 0; i < codes.length; i++) {
        const code = codes[i];
        const rgb = code >= 0 && code < palette.length ? palette[code] : UNASSIGNED;
        out[3 * i] = rgb[0];
        out[3 * i + 1] = rgb[1];
        out[3 * i + 2] = rgb[2];
    }
    return out;
}
