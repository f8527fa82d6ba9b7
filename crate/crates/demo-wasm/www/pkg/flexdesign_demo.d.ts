/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Capacities, mean demands, unit profits and arc costs for drawing.
     */
    describe(): string;
    /**
     * Objective estimate of the network given as a row-major 0/1 mask, plus
     * the optimal allocation for the first sample.
     */
    evaluate(mask: Uint8Array, samples: number, seed: bigint): string;
    static fromJson(text: string): Demo;
    /**
     * Greedy heuristic on `omega` decision samples, with the score after every added arc.
     */
    greedy(omega: number, seed: bigint): string;
    /**
     * `auto`, `fashion`, or `synthetic` (4x4, seeded by `seed`).
     */
    constructor(scenario: string, budget: number, seed: bigint);
    /**
     * Per-sample plain and variance-reduced reward terms on common samples.
     */
    variance(mask: Uint8Array, samples: number, seed: bigint): string;
    readonly budget: number;
    readonly m: number;
    readonly n: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_budget: (a: number) => number;
    readonly demo_describe: (a: number) => [number, number];
    readonly demo_evaluate: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly demo_fromJson: (a: number, b: number) => [number, number, number];
    readonly demo_greedy: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly demo_m: (a: number) => number;
    readonly demo_n: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly demo_variance: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
