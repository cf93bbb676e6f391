/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_explorer_free: (a: number, b: number) => void;
export const explorer_cumulative_fractions: (a: number) => [number, number];
export const explorer_depth: (a: number, b: number) => [number, number, number];
export const explorer_eigenvalues: (a: number) => [number, number];
export const explorer_mahalanobis: (a: number, b: number, c: number) => [number, number, number];
export const explorer_modes: (a: number) => number;
export const explorer_new: (a: number, b: number) => [number, number, number];
export const explorer_normal_count: (a: number) => number;
export const explorer_shape_points: (a: number, b: number, c: number) => [number, number, number, number];
export const explorer_shape_slice_points: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const explorer_slice_size: (a: number, b: number) => [number, number, number, number];
export const explorer_subject_count: (a: number) => number;
export const explorer_subject_scores: (a: number, b: number) => [number, number, number, number];
export const explorer_subject_slice: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const explorer_subject_slice_points: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const explorer_warped_slice: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
