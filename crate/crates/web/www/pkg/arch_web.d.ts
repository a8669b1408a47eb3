/* tslint:disable */
/* eslint-disable */

export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Add up to `count` isolated voxels: floaters in free space and stickers
     * on surfaces, alternating. Returns how many were placed.
     */
    add_noise(count: number): number;
    /**
     * Run clean-up for at most `iterations` passes; returns voxels removed.
     */
    clean(iterations: number): number;
    /**
     * A synthetic house; the side is clamped to the range the generator supports.
     */
    constructor(seed: number, resolution: number);
    /**
     * One byte per voxel, index `x + R(y + Rz)`.
     */
    occupancy(): Uint8Array;
    occupied(): number;
    resolution(): number;
    toggle(x: number, y: number, z: number): void;
    /**
     * Top view: fraction of each z column that is filled, `x + R·y`.
     */
    top_view(): Float32Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly scene_add_noise: (a: number, b: number) => number;
    readonly scene_clean: (a: number, b: number) => number;
    readonly scene_new: (a: number, b: number) => number;
    readonly scene_occupancy: (a: number) => [number, number];
    readonly scene_occupied: (a: number) => number;
    readonly scene_resolution: (a: number) => number;
    readonly scene_toggle: (a: number, b: number, c: number, d: number) => void;
    readonly scene_top_view: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
