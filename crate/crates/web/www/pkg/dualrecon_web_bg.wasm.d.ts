/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const feasibility: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const mask_lines: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const phantom: (a: number, b: bigint) => [number, number, number, number];
export const zero_filled: (a: number, b: bigint, c: number, d: number, e: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
