/* tslint:disable */
/* eslint-disable */

/**
 * A tiny captioner learning a handful of synthetic captions by heart.
 */
export class OverfitDemo {
    free(): void;
    [Symbol.dispose](): void;
    constructor(seed: number);
    /**
     * Trains for `epochs` more epochs and reports the loss and captions.
     */
    step(epochs: number): string;
}

export function check_caption(raw: string): string;

export function meteor_alignment(hyp: string, reference: string, lexicon: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_overfitdemo_free: (a: number, b: number) => void;
    readonly check_caption: (a: number, b: number) => [number, number];
    readonly meteor_alignment: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly overfitdemo_new: (a: number) => [number, number, number];
    readonly overfitdemo_step: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
