/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_budget: (a: number) => number;
export const demo_describe: (a: number) => [number, number];
export const demo_evaluate: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const demo_fromJson: (a: number, b: number) => [number, number, number];
export const demo_greedy: (a: number, b: number, c: bigint) => [number, number, number, number];
export const demo_m: (a: number) => number;
export const demo_n: (a: number) => number;
export const demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const demo_variance: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
