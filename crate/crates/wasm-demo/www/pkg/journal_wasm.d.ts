/* tslint:disable */
/* eslint-disable */

/**
 * JSON array of `[t, d]` pairs.
 */
export function decayCurve(lambda: number, horizon: number, step: number): string;

export function defaultLambda(): number;

/**
 * Takes a JSON object with `e, recall_count, c, age_days, w_e, w_r, w_c, lambda`.
 */
export function memoryStrength(input_json: string): number;

/**
 * Takes a JSON array of memories and returns the ranked top `k` as JSON.
 */
export function rankMemories(memories_json: string, query: string, k: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly decayCurve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly defaultLambda: () => number;
    readonly memoryStrength: (a: number, b: number) => [number, number, number];
    readonly rankMemories: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
