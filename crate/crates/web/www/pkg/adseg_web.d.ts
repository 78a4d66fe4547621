/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Runs k-means and returns sizes, sums of squares, the agreement with
     * the planted segments and each cluster's strongest categories.
     */
    cluster(k: number, seed: number, restarts: number): string;
    events(): number;
    /**
     * Index values of every cluster for one genre and stage.
     */
    index(genre: string, stage: string): string;
    /**
     * `clusters` planted segments over `users` users.
     */
    constructor(users: number, clusters: number, seed: number);
    /**
     * Rules above the given thresholds, strongest first.
     */
    rules(min_left_support: number, lift: number, limit: number): string;
    users(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_cluster: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_events: (a: number) => number;
    readonly demo_index: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_rules: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_users: (a: number) => number;
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
