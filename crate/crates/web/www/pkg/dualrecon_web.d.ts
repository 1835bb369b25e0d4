/* tslint:disable */
/* eslint-disable */

/**
 * Feasibility probabilities for `k` in `k_lo..=k_hi` and integer `a` in
 * `a_lo..=a_hi`, row-major with one row per acceleration.
 */
export function feasibility(k_lo: number, k_hi: number, a_lo: number, a_hi: number, acs: number): Float64Array;

/**
 * One byte per phase-encode line, 1 where sampled.
 */
export function mask_lines(height: number, accel: number, acs: number, seed: bigint): Uint8Array;

/**
 * Magnitude of a `size x size` phantom, row-major.
 */
export function phantom(size: number, seed: bigint): Float64Array;

/**
 * Magnitude of the inverse transform of the masked k-space of the phantom.
 */
export function zero_filled(size: number, seed: bigint, accel: number, acs: number, mask_seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly feasibility: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly mask_lines: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly phantom: (a: number, b: bigint) => [number, number, number, number];
    readonly zero_filled: (a: number, b: bigint, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
