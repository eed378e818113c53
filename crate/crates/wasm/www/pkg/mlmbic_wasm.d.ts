/* tslint:disable */
/* eslint-disable */

/**
 * BIC under the three sample-size conventions for a known deviance and
 * penalty split.
 */
export function bic_values(deviance: number, k1: number, k2: number, n_obs: number, n_clusters: number): string;

/**
 * Runs the log-determinant simulation. `config_json` may be partial; missing
 * fields take their defaults.
 */
export function run_demo(config_json: string): string;

/**
 * Fits every fixed × random combination on CSV text and returns the ranked
 * report. Term sets are JSON arrays of `{"name", "terms"}`.
 */
export function select_csv(csv: string, group: string, response: string, fixed_json: string, random_json: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bic_values: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly run_demo: (a: number, b: number) => [number, number, number, number];
    readonly select_csv: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
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
