/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_overfitdemo_free: (a: number, b: number) => void;
export const check_caption: (a: number, b: number) => [number, number];
export const meteor_alignment: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const overfitdemo_new: (a: number) => [number, number, number];
export const overfitdemo_step: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
