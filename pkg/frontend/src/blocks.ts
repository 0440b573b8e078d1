/** Parsers for the backend's binary wire blocks.
 *
 * Both blocks are little-endian with the payload padded to an 8-byte
 * boundary, so the typed arrays below are zero-copy views into the
 * response buffer. Browsers are little-endian hosts, which makes the
 * direct Uint16Array / Float32Array views byte-correct.
 *
 * Expression block ("EXPB"):
 *   magic 4s, version u32, n_cells u64,
 *   raw_min f64, raw_max f64, clip_value f64,
 *   name_len u32, name utf-8, pad to 8,
 *   payload u16[n_cells]
 *
 * Embedding block ("EMBB"):
 *   magic 4s, version u32, n_cells u64, dims u32,
 *   name_len u32, name utf-8, pad to 8,
 *   payload f32[n_cells * dims]
 *
 * Annotation block ("ANNB"):
 *   magic 4s, version u32, n_cells u64, n_categories u32,
 *   name_len u32, name utf-8, pad to 8,
 *   payload i32[n_cells]  (category code per cell, -1 = unassigned)
 */

import type { NormalizationInfo } from "./types.js";

export class MalformedBlock extends Error {}

export const BLOCK_VERSION = 1;

const EXPR_HEAD = 44; // 4s + u32 + u64 + 3*f64 + u32
const EMBED_HEAD = 24; // 4s + u32 + u64 + u32 + u32

export interface ExpressionBlock {
    values: Uint16Array;
    info: NormalizationInfo;
}

export interface EmbeddingBlock {
    coords: Float32Array;
    nCells: number;
    dims: number;
    name: string;
}

function magicAt(view: DataView, offset: number): string {
    return String.fromCharCode(
        view.getUint8(offset),
        view.getUint8(offset + 1),
        view.getUint8(offset + 2),
        view.getUint8(offset + 3),
    );
}

function readU64(view: DataView, offset: number): number {
    const big = view.getBigUint64(offset, true);
    if (big > BigInt(Number.MAX_SAFE_INTEGER)) {
        throw new MalformedBlock(`count ${big} exceeds the safe integer range`);
    }
    return Number(big);
}

function pad8(n: number): number {
    return n + ((8 - (n % 8)) % 8);
}

export function decodeExpressionBlock(buf: ArrayBuffer): ExpressionBlock {
    if (buf.byteLength < EXPR_HEAD) {
        throw new MalformedBlock("expression block shorter than its header");
    }
    const view = new DataView(buf);
    const magic = magicAt(view, 0);
    const version = view.getUint32(4, true);
    if (magic !== "EXPB" || version !== BLOCK_VERSION) {
        throw new MalformedBlock(
            `bad expression block magic/version ${magic}/${version}`,
        );
    }
    const nCells = readU64(view, 8);
    const info: NormalizationInfo = {
        raw_min: view.getFloat64(16, true),
        raw_max: view.getFloat64(24, true),
        clip_value: view.getFloat64(32, true),
        gene_name: "",
    };
    const nameLen = view.getUint32(40, true);
    if (buf.byteLength < EXPR_HEAD + nameLen) {
        throw new MalformedBlock("expression block name truncated");
    }
    info.gene_name = new TextDecoder().decode(
        new Uint8Array(buf, EXPR_HEAD, nameLen),
    );
    const payload = pad8(EXPR_HEAD + nameLen);
    if (buf.byteLength < payload + 2 * nCells) {
        throw new MalformedBlock("expression block payload truncated");
    }
    return { values: new Uint16Array(buf, payload, nCells), info };
}

export interface AnnotationBlock {
    codes: Int32Array;
    nCategories: number;
    name: string;
}

export function decodeAnnotationBlock(buf: ArrayBuffer): AnnotationBlock {
    if (buf.byteLength < EMBED_HEAD) {
        throw new MalformedBlock("annotation block shorter than its header");
    }
    const view = new DataView(buf);
    const magic = magicAt(view, 0);
    const version = view.getUint32(4, true);
    if (magic !== "ANNB" || version !== BLOCK_VERSION) {
        throw new MalformedBlock(
            `bad annotation block magic/version ${magic}/${version}`,
        );
    }
    const nCells = readU64(view, 8);
    const nCategories = view.getUint32(16, true);
    const nameLen = view.getUint32(20, true);
    if (buf.byteLength < EMBED_HEAD + nameLen) {
        throw new MalformedBlock("annotation block name truncated");
    }
    const name = new TextDecoder().decode(
        new Uint8Array(buf, EMBED_HEAD, nameLen),
    );
    const payload = pad8(EMBED_HEAD + nameLen);
    if (buf.byteLength < payload + 4 * nCells) {
        throw new MalformedBlock("annotation block payload truncated");
    }
    return { codes: new Int32Array(buf, payload, nCells), nCategories, name };
}

export function decodeEmbeddingBlock(buf: ArrayBuffer): EmbeddingBlock {
    if (buf.byteLength < EMBED_HEAD) {
        throw new MalformedBlock("embedding block shorter than its header");
    }
    const view = new DataView(buf);
    const magic = magicAt(view, 0);
    const version = view.getUint32(4, true);
    if (magic !== "EMBB" || version !== BLOCK_VERSION) {
        throw new MalformedBlock(
            `bad embedding block magic/version ${magic}/${version}`,
        );
    }
    const nCells = readU64(view, 8);
    const dims = view.getUint32(16, true);
    const nameLen = view.getUint32(20, true);
    if (buf.byteLength < EMBED_HEAD + nameLen) {
        throw new MalformedBlock("embedding block name truncated");
    }
    const name = new TextDecoder().decode(
        new Uint8Array(buf, EMBED_HEAD, nameLen),
    );
    const payload = pad8(EMBED_HEAD + nameLen);
    if (buf.byteLength < payload + 4 * nCells * dims) {
        throw new MalformedBlock("embedding block payload truncated");
    }
    return {
        coords: new Float32Array(buf, payload, nCells * dims),
        nCells,
        dims,
        name,
    };
}
