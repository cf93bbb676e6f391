/* tslint:disable */
/* eslint-disable */

export class Explorer {
    free(): void;
    [Symbol.dispose](): void;
    cumulative_fractions(): Float64Array;
    depth(axis: number): number;
    eigenvalues(): Float64Array;
    mahalanobis(z: Float64Array): number;
    modes(): number;
    /**
     * Synthesize `n_train` normal subjects plus three with a bump and build
     * the shape space from the normal ones.
     */
    constructor(seed: number, n_train: number);
    normal_count(): number;
    /**
     * Flat `x,y,z` list of the shape at per-mode standard scores `z`.
     */
    shape_points(z: Float64Array): Float64Array;
    /**
     * Points of the shape at scores `z` near the slice plane.
     */
    shape_slice_points(z: Float64Array, axis: number, index: number): Float64Array;
    /**
     * `[width, height]` of a slice orthogonal to `axis`.
     */
    slice_size(axis: number): Uint32Array;
    subject_count(): number;
    subject_scores(i: number): Float64Array;
    /**
     * RGBA slice of subject `i`'s scan.
     */
    subject_slice(i: number, axis: number, index: number): Uint8Array;
    /**
     * Subject `i`'s correspondences near the slice plane, as pixel pairs.
     */
    subject_slice_points(i: number, axis: number, index: number): Float64Array;
    /**
     * RGBA slice of subject `i`'s scan warped onto the shape at scores `z`.
     */
    warped_slice(i: number, z: Float64Array, axis: number, index: number): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_explorer_free: (a: number, b: number) => void;
    readonly explorer_cumulative_fractions: (a: number) => [number, number];
    readonly explorer_depth: (a: number, b: number) => [number, number, number];
    readonly explorer_eigenvalues: (a: number) => [number, number];
    readonly explorer_mahalanobis: (a: number, b: number, c: number) => [number, number, number];
    readonly explorer_modes: (a: number) => number;
    readonly explorer_new: (a: number, b: number) => [number, number, number];
    readonly explorer_normal_count: (a: number) => number;
    readonly explorer_shape_points: (a: number, b: number, c: number) => [number, number, number, number];
    readonly explorer_shape_slice_points: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly explorer_slice_size: (a: number, b: number) => [number, number, number, number];
    readonly explorer_subject_count: (a: number) => number;
    readonly explorer_subject_scores: (a: number, b: number) => [number, number, number, number];
    readonly explorer_subject_slice: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly explorer_subject_slice_points: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly explorer_warped_slice: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
